//! Manifest-driven image loading: PPM decode, [0,1] scaling, bilinear
//! resize to the model's input size.

use std::path::Path;

use crate::error::Error;
use crate::tensor::Tensor;
use crate::Result;

use super::ppm::read_ppm;
use super::{Manifest, Split};

/// One decoded sample: C×H×W tensor in [0,1] plus its label id (position
/// of the label in the manifest's label list).
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub tensor: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    /// (path, error) for files skipped in lenient mode.
    pub skipped: Vec<(String, String)>,
}

/// Align-corners bilinear resampling of a C×H×W tensor. A same-size resize
/// reproduces the input exactly.
pub fn bilinear_resize(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w]: [usize; 3] = src
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("resize input must be 3-d, got {:?}", src.shape())))?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("resize target must be nonzero".into()));
    }
    let scale_y = if out_h > 1 {
        (h - 1) as f64 / (out_h - 1) as f64
    } else {
        0.0
    };
    let scale_x = if out_w > 1 {
        (w - 1) as f64 / (out_w - 1) as f64
    } else {
        0.0
    };
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &src.data()[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let sy = oy as f64 * scale_y;
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for ox in 0..out_w {
                let sx = ox as f64 * scale_x;
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                let v00 = plane[y0 * w + x0];
                let v01 = plane[y0 * w + x1];
                let v10 = plane[y1 * w + x0];
                let v11 = plane[y1 * w + x1];
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bottom = v10 * (1.0 - fx) + v11 * fx;
                out[(ch * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

fn decode(path: &Path, target: (usize, usize)) -> Result<Tensor> {
    let (w, h, rgb) = read_ppm(path)?;
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                data[(ch * h + y) * w + x] = rgb[(y * w + x) * 3 + ch] as f64 / 255.0;
            }
        }
    }
    let t = Tensor::from_vec(&[3, h, w], data)?;
    if (h, w) == target {
        Ok(t)
    } else {
        bilinear_resize(&t, target.0, target.1)
    }
}

/// Loads every manifest row (optionally restricted to one split) in
/// manifest order. With `skip_errors`, undecodable files are reported and
/// skipped; otherwise the first failure aborts.
pub fn load(
    root: impl AsRef<Path>,
    manifest: &Manifest,
    target: (usize, usize),
    split: Option<Split>,
    skip_errors: bool,
) -> Result<(Vec<ImageSample>, LoadReport)> {
    let root = root.as_ref();
    let labels = manifest.labels();
    let mut samples = Vec::new();
    let mut report = LoadReport::default();
    for row in &manifest.rows {
        if let Some(s) = split {
            if row.split != s {
                continue;
            }
        }
        let label = labels
            .iter()
            .position(|l| l == &row.label)
            .expect("labels() covers every row");
        match decode(&root.join(&row.path), target) {
            Ok(tensor) => {
                debug_assert!(tensor.all_finite());
                samples.push(ImageSample { tensor, label });
            }
            Err(e) if skip_errors => report.skipped.push((row.path.clone(), e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok((samples, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ppm::write_ppm;
    use crate::dataset::ManifestRow;

    #[test]
    fn solid_white_becomes_all_ones() {
        let dir = tempfile::tempdir().unwrap();
        write_ppm(dir.path().join("white.ppm"), 4, 4, &[255u8; 48]).unwrap();
        let manifest = Manifest {
            rows: vec![ManifestRow {
                path: "white.ppm".into(),
                label: "drum".into(),
                split: Split::Train,
            }],
        };
        let (samples, report) = load(dir.path(), &manifest, (4, 4), None, false).unwrap();
        assert!(report.skipped.is_empty());
        assert!(samples[0].tensor.data().iter().all(|&v| v == 1.0));
        assert_eq!(samples[0].label, 0);
    }

    #[test]
    fn same_size_resize_is_identity() {
        let t = Tensor::from_vec(&[1, 2, 3], vec![0.1, 0.5, 0.9, 0.2, 0.4, 0.8]).unwrap();
        let r = bilinear_resize(&t, 2, 3).unwrap();
        for (a, b) in r.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkerboard_upsample_matches_closed_form() {
        // 2x2 checkerboard upsampled to 4x4 with align-corners: sample
        // positions are 0, 1/3, 2/3, 1 in source space
        let t = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = bilinear_resize(&t, 4, 4).unwrap();
        let expect = |sy: f64, sx: f64| {
            let top = 1.0 * (1.0 - sx);
            let bottom = 1.0 * sx;
            top * (1.0 - sy) + bottom * sy
        };
        let coords = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (oy, &sy) in coords.iter().enumerate() {
            for (ox, &sx) in coords.iter().enumerate() {
                let got = r.data()[oy * 4 + ox];
                let want = expect(sy, sx);
                assert!(
                    (got - want).abs() < 1e-12,
                    "({oy},{ox}): got {got}, want {want}"
                );
            }
        }
        // corners preserved exactly
        assert_eq!(r.data()[0], 1.0);
        assert_eq!(r.data()[3], 0.0);
        assert_eq!(r.data()[12], 0.0);
        assert_eq!(r.data()[15], 1.0);
    }

    #[test]
    fn bad_file_skipped_or_aborts_per_flag() {
        let dir = tempfile::tempdir().unwrap();
        write_ppm(dir.path().join("ok.ppm"), 2, 2, &[128u8; 12]).unwrap();
        std::fs::write(dir.path().join("bad.ppm"), b"not a ppm").unwrap();
        let manifest = Manifest {
            rows: vec![
                ManifestRow {
                    path: "bad.ppm".into(),
                    label: "fish".into(),
                    split: Split::Train,
                },
                ManifestRow {
                    path: "ok.ppm".into(),
                    label: "fish".into(),
                    split: Split::Train,
                },
            ],
        };
        let (samples, report) = load(dir.path(), &manifest, (2, 2), None, true).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].0.contains("bad.ppm"));

        assert!(load(dir.path(), &manifest, (2, 2), None, false).is_err());
    }

    #[test]
    fn split_filter_selects_rows() {
        let dir = tempfile::tempdir().unwrap();
        write_ppm(dir.path().join("a.ppm"), 2, 2, &[10u8; 12]).unwrap();
        write_ppm(dir.path().join("b.ppm"), 2, 2, &[20u8; 12]).unwrap();
        let manifest = Manifest {
            rows: vec![
                ManifestRow {
                    path: "a.ppm".into(),
                    label: "bird".into(),
                    split: Split::Train,
                },
                ManifestRow {
                    path: "b.ppm".into(),
                    label: "bird".into(),
                    split: Split::Test,
                },
            ],
        };
        let (train, _) = load(dir.path(), &manifest, (2, 2), Some(Split::Train), false).unwrap();
        assert_eq!(train.len(), 1);
        assert!((train[0].tensor.data()[0] - 10.0 / 255.0).abs() < 1e-12);
    }
}
