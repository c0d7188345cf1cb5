//! LV volume curves from label masks, ED/ES detection and ejection fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{label, Geometry, SegmentationMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeCurve {
    /// LV blood pool volume per frame, mL.
    pub volumes: Vec<f64>,
    /// ms
    pub frame_dt: f64,
    /// Contribution of each slice per frame, mL, `[slice][frame]`.
    pub slice_volumes: Vec<Vec<f64>>,
}

impl VolumeCurve {
    pub fn from_volumes(volumes: Vec<f64>, frame_dt: f64) -> Self {
        let slice_volumes = vec![volumes.clone()];
        Self {
            volumes,
            frame_dt,
            slice_volumes,
        }
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            volumes: self.volumes.iter().map(|v| v * factor).collect(),
            frame_dt: self.frame_dt,
            slice_volumes: self
                .slice_volumes
                .iter()
                .map(|s| s.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }
}

/// Sums LV pixels over all slices of all stacks. Stacks with fewer frames
/// than the longest one are sampled at the nearest frame.
pub fn mask_to_volume(stacks: &[SegmentationMask], geometry: Geometry, frame_dt: f64) -> Result<VolumeCurve> {
    let n_frames = stacks.iter().map(|s| s.n_frames).max().unwrap_or(0);
    if n_frames == 0 || stacks.iter().all(|s| s.n_slices == 0) {
        return Err(Error::Volumetry("empty mask set".into()));
    }
    if stacks.iter().any(|s| s.n_frames == 0 && s.n_slices > 0) {
        return Err(Error::Volumetry("mask stack without frames".into()));
    }
    if !(geometry.pixel_size > 0.0 && geometry.slice_thickness > 0.0) {
        return Err(Error::Volumetry(
            "pixel size and slice thickness must be positive".into(),
        ));
    }
    let voxel_ml = geometry.pixel_size * geometry.pixel_size * geometry.slice_thickness * 1e-3;
    let mut slice_volumes = Vec::new();
    for stack in stacks {
        for s in 0..stack.n_slices {
            let curve = (0..n_frames)
                .map(|f| {
                    let src = if stack.n_frames == n_frames {
                        f
                    } else {
                        let t = (f as f64 + 0.5) * stack.n_frames as f64 / n_frames as f64 - 0.5;
                        (t.round().max(0.0) as usize).min(stack.n_frames - 1)
                    };
                    let count = stack.frame(s, src).iter().filter(|&&v| v == label::LV).count();
                    count as f64 * voxel_ml
                })
                .collect::<Vec<_>>();
            slice_volumes.push(curve);
        }
    }
    let volumes = (0..n_frames)
        .map(|f| slice_volumes.iter().map(|s| s[f]).sum())
        .collect();
    Ok(VolumeCurve {
        volumes,
        frame_dt,
        slice_volumes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtremaParams {
    /// Fraction of the curve range.
    pub min_prominence: f64,
    /// ms
    pub min_separation: f64,
}

impl Default for ExtremaParams {
    fn default() -> Self {
        Self {
            min_prominence: 0.05,
            min_separation: 400.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumKind {
    Max,
    Min,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    /// Frame index and kind in time order, alternating.
    pub sequence: Vec<(usize, ExtremumKind)>,
    pub ed_frames: Vec<usize>,
    pub es_frames: Vec<usize>,
    pub edv: Vec<f64>,
    pub esv: Vec<f64>,
}

/// Interior local maxima; a plateau counts once, at its first sample.
fn local_maxima(v: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = v.len();
    let mut i = 1;
    while i + 1 < n {
        if v[i] > v[i - 1] {
            let mut j = i;
            while j + 1 < n && v[j + 1] == v[i] {
                j += 1;
            }
            if j + 1 < n && v[j + 1] < v[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Height above the higher of the two bases reached before a higher sample
/// (or the curve end) on either side.
fn prominence(v: &[f64], i: usize) -> f64 {
    let mut left = v[i];
    for j in (0..i).rev() {
        if v[j] > v[i] {
            break;
        }
        left = left.min(v[j]);
    }
    let mut right = v[i];
    for &x in &v[i + 1..] {
        if x > v[i] {
            break;
        }
        right = right.min(x);
    }
    v[i] - left.max(right)
}

fn peaks(v: &[f64], min_prominence: f64, min_gap: f64, dt: f64) -> Vec<usize> {
    let mut cand: Vec<usize> = local_maxima(v)
        .into_iter()
        .filter(|&i| prominence(v, i) >= min_prominence)
        .collect();
    cand.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in cand {
        if kept.iter().all(|&k| (k as f64 - i as f64).abs() * dt >= min_gap) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// Finds ED (maxima) and ES (minima) frames with prominence and separation
/// limits, then merges runs of the same kind keeping the most extreme one.
pub fn detect_extrema(curve: &VolumeCurve, params: &ExtremaParams) -> Result<Extrema> {
    let v = &curve.volumes;
    if v.len() < 3 {
        return Err(Error::Volumetry("curve too short for extrema".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("volume curve".into()));
    }
    let hi = v.iter().copied().fold(f64::MIN, f64::max);
    let lo = v.iter().copied().fold(f64::MAX, f64::min);
    let threshold = params.min_prominence * (hi - lo);
    if hi - lo <= 0.0 {
        return Err(Error::Volumetry("flat volume curve".into()));
    }
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let mut events: Vec<(usize, ExtremumKind)> = peaks(v, threshold, params.min_separation, curve.frame_dt)
        .into_iter()
        .map(|i| (i, ExtremumKind::Max))
        .chain(
            peaks(&neg, threshold, params.min_separation, curve.frame_dt)
                .into_iter()
                .map(|i| (i, ExtremumKind::Min)),
        )
        .collect();
    events.sort_unstable_by_key(|e| e.0);
    let mut sequence: Vec<(usize, ExtremumKind)> = Vec::new();
    for e in events {
        match sequence.last_mut() {
            Some(last) if last.1 == e.1 => {
                let better = match e.1 {
                    ExtremumKind::Max => v[e.0] > v[last.0],
                    ExtremumKind::Min => v[e.0] < v[last.0],
                };
                if better {
                    *last = e;
                }
            }
            _ => sequence.push(e),
        }
    }
    let pick = |kind| -> Vec<usize> { sequence.iter().filter(|e| e.1 == kind).map(|e| e.0).collect() };
    let (ed_frames, es_frames) = (pick(ExtremumKind::Max), pick(ExtremumKind::Min));
    if ed_frames.is_empty() || es_frames.is_empty() {
        return Err(Error::Volumetry("no end-diastolic/end-systolic pair found".into()));
    }
    Ok(Extrema {
        edv: ed_frames.iter().map(|&i| v[i]).collect(),
        esv: es_frames.iter().map(|&i| v[i]).collect(),
        sequence,
        ed_frames,
        es_frames,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EjectionFraction {
    /// percent
    pub ef: f64,
    pub median_edv: f64,
    pub median_esv: f64,
}

pub fn ejection_fraction(edv: &[f64], esv: &[f64]) -> Result<EjectionFraction> {
    let (Some(ed), Some(es)) = (median(edv), median(esv)) else {
        return Err(Error::Volumetry("EDV and ESV lists must be non-empty".into()));
    };
    if ed == 0.0 {
        return Err(Error::Volumetry("median EDV is zero".into()));
    }
    Ok(EjectionFraction {
        ef: 100.0 * (ed - es) / ed,
        median_edv: ed,
        median_esv: es,
    })
}

/// Everything the volume report carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub curve: VolumeCurve,
    pub extrema: Extrema,
    pub result: EjectionFraction,
}

pub fn analyze(curve: VolumeCurve, params: &ExtremaParams) -> Result<VolumeReport> {
    let extrema = detect_extrema(&curve, params)?;
    let result = ejection_fraction(&extrema.edv, &extrema.esv)?;
    Ok(VolumeReport { curve, extrema, result })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomConfig};
    use std::f64::consts::PI;

    fn geometry() -> Geometry {
        Geometry {
            pixel_size: 1.29,
            slice_thickness: 8.0,
        }
    }

    #[test]
    fn hundred_pixels_volume() {
        let mut m = SegmentationMask::zeros(16, 16, 1, 1, 1.29, 8.0);
        m.data[..100].iter_mut().for_each(|v| *v = label::LV);
        m.data[100..120].iter_mut().for_each(|v| *v = label::MYOCARDIUM);
        let c = mask_to_volume(&[m], geometry(), 48.0).unwrap();
        assert!((c.volumes[0] - 100.0 * 1.6641 * 8.0 * 1e-3).abs() < 1e-12);
        assert!((c.volumes[0] - 1.331).abs() < 1e-3);
    }

    #[test]
    fn background_gives_zero_curve_and_empty_errors() {
        let m = SegmentationMask::zeros(8, 8, 5, 2, 1.0, 1.0);
        let c = mask_to_volume(&[m], geometry(), 48.0).unwrap();
        assert_eq!(c.volumes, vec![0.0; 5]);
        assert_eq!(c.slice_volumes.len(), 2);
        assert!(mask_to_volume(&[], geometry(), 48.0).is_err());
        let empty = SegmentationMask::zeros(8, 8, 0, 0, 1.0, 1.0);
        assert!(mask_to_volume(&[empty], geometry(), 48.0).is_err());
    }

    #[test]
    fn shorter_stacks_use_nearest_frame() {
        let mut a = SegmentationMask::zeros(4, 4, 4, 1, 1.0, 1.0);
        let mut b = SegmentationMask::zeros(4, 4, 2, 1, 1.0, 1.0);
        for f in 0..4 {
            a.frame_mut(0, f)[[0, 0]] = label::LV;
        }
        b.frame_mut(0, 1).fill(label::LV);
        let g = Geometry {
            pixel_size: 10.0,
            slice_thickness: 10.0,
        };
        let c = mask_to_volume(&[a, b], g, 48.0).unwrap();
        assert_eq!(c.volumes, vec![1.0, 1.0, 17.0, 17.0]);
    }

    #[test]
    fn phantom_masks_match_true_volumes() {
        let p = generate_phantom(&PhantomConfig::default()).unwrap();
        let c = mask_to_volume(std::slice::from_ref(&p.masks), p.masks.geometry(), p.config.frame_dt).unwrap();
        for (m, t) in c.volumes.iter().zip(&p.true_volume_curve) {
            assert!((m - t).abs() < 0.02 * t, "{m} {t}");
        }
    }

    fn sinusoid(n: usize, dt: f64, period: f64) -> VolumeCurve {
        let v = (0..n)
            .map(|i| 100.0 + 30.0 * (2.0 * PI * i as f64 * dt / period).sin())
            .collect();
        VolumeCurve::from_volumes(v, dt)
    }

    #[test]
    fn sinusoid_extrema_at_analytic_positions() {
        // 3 periods of 1 s sampled every 20 ms
        let c = sinusoid(150, 20.0, 1000.0);
        let e = detect_extrema(&c, &ExtremaParams::default()).unwrap();
        assert_eq!(e.ed_frames.len(), 3);
        assert_eq!(e.es_frames.len(), 3);
        for (k, &f) in e.ed_frames.iter().enumerate() {
            let expect = (250.0 + 1000.0 * k as f64) / 20.0;
            assert!((f as f64 - expect).abs() <= 1.0);
        }
        for (k, &f) in e.es_frames.iter().enumerate() {
            let expect = (750.0 + 1000.0 * k as f64) / 20.0;
            assert!((f as f64 - expect).abs() <= 1.0);
        }
    }

    #[test]
    fn monotone_curve_has_no_extrema() {
        let c = VolumeCurve::from_volumes((0..40).map(|i| i as f64).collect(), 48.0);
        assert!(matches!(
            detect_extrema(&c, &ExtremaParams::default()),
            Err(Error::Volumetry(_))
        ));
        let flat = VolumeCurve::from_volumes(vec![3.0; 10], 48.0);
        assert!(detect_extrema(&flat, &ExtremaParams::default()).is_err());
    }

    #[test]
    fn small_ripples_and_close_peaks_are_ignored() {
        let mut v: Vec<f64> = (0..100)
            .map(|i| 100.0 + 30.0 * (2.0 * PI * i as f64 / 25.0).sin())
            .collect();
        // 1% ripple near a trough and a second bump 2 frames after a crest
        v[19] += 0.3;
        v[8] = v[6] + 0.01;
        let c = VolumeCurve::from_volumes(v, 40.0);
        let e = detect_extrema(&c, &ExtremaParams::default()).unwrap();
        assert_eq!(e.ed_frames.len(), 4);
        assert_eq!(e.es_frames.len(), 4);
    }

    #[test]
    fn jittered_phantom_cycles_match_truth() {
        let cfg = PhantomConfig {
            arrhythmia_jitter: 0.2,
            n_frames: 160,
            n_slices: 4,
            seed: 3,
            ..PhantomConfig::default()
        };
        let p = generate_phantom(&cfg).unwrap();
        let c = mask_to_volume(std::slice::from_ref(&p.masks), p.masks.geometry(), cfg.frame_dt).unwrap();
        let e = detect_extrema(&c, &ExtremaParams::default()).unwrap();
        assert!(e.ed_frames.len() >= 4);
        let truth = &p.true_volume_curve;
        let bounds = &p.cycle_boundaries;
        for (&f, &edv) in e.ed_frames.iter().zip(&e.edv) {
            // sampled truth maximum around the detected crest
            let k = bounds.partition_point(|&b| b <= f + 2).saturating_sub(1);
            let lo = bounds[k].saturating_sub(2);
            let hi = bounds.get(k + 1).copied().unwrap_or(truth.len()).min(truth.len());
            let t = truth[lo..hi].iter().copied().fold(f64::MIN, f64::max);
            assert!((edv - t).abs() < 0.02 * t, "{f} {edv} {t}");
        }
    }

    #[test]
    fn ejection_fraction_examples() {
        let r = ejection_fraction(&[150.0], &[60.0]).unwrap();
        assert!((r.ef - 60.0).abs() < 1e-12);
        assert_eq!(ejection_fraction(&[80.0, 90.0], &[80.0, 90.0]).unwrap().ef, 0.0);
        assert!(ejection_fraction(&[], &[1.0]).is_err());
        assert!(ejection_fraction(&[0.0], &[0.0]).is_err());
        let r = ejection_fraction(&[100.0, 140.0, 120.0, 500.0], &[50.0]).unwrap();
        assert_eq!(r.median_edv, 130.0);
    }

    #[test]
    fn phantom_ef_sixty_percent() {
        let cfg = PhantomConfig {
            n_frames: 104,
            ..PhantomConfig::default()
        }
        .with_ejection_fraction(0.6);
        let p = generate_phantom(&cfg).unwrap();
        let c = mask_to_volume(std::slice::from_ref(&p.masks), p.masks.geometry(), cfg.frame_dt).unwrap();
        let r = analyze(c, &ExtremaParams::default()).unwrap();
        assert!((58.0..=62.0).contains(&r.result.ef), "{}", r.result.ef);
    }

    #[test]
    fn ef_is_scale_invariant() {
        let c = sinusoid(150, 20.0, 1000.0);
        let a = analyze(c.clone(), &ExtremaParams::default()).unwrap().result.ef;
        let b = analyze(c.scaled(3.7), &ExtremaParams::default()).unwrap().result.ef;
        assert!((a - b).abs() < 1e-12);
    }
}
