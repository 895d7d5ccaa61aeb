//! Reconstruction quality: PSNR, RMSE, maximum error, SSIM and the error in
//! the autocorrelation function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Side length of the square SSIM window.
pub const SSIM_WINDOW: usize = 8;

fn check_pair(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    Ok(())
}

fn value_range(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

pub fn rmse(original: &Dataset, decoded: &Dataset) -> Result<f64> {
    check_pair(original, decoded)?;
    let sum: f64 = original
        .values()
        .iter()
        .zip(decoded.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / original.len() as f64).sqrt())
}

pub fn max_abs_error(original: &Dataset, decoded: &Dataset) -> Result<f64> {
    check_pair(original, decoded)?;
    Ok(original
        .values()
        .iter()
        .zip(decoded.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// `20 log10(range / rmse)` with the range taken from the original.
///
/// A perfect reconstruction gives `+inf`. A constant original that is not
/// reproduced exactly has no meaningful PSNR and is an error.
pub fn psnr(original: &Dataset, decoded: &Dataset) -> Result<f64> {
    let e = rmse(original, decoded)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    let range = value_range(original.values());
    if range == 0.0 {
        return Err(Error::InvalidArgument(
            "PSNR is undefined for a constant field with non-zero error".into(),
        ));
    }
    Ok(20.0 * (range / e).log10())
}

/// A row-major 2-D view used by [`ssim`].
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Slice2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::InvalidArgument(format!(
                "{rows}x{cols} slice needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Slice2 { rows, cols, data })
    }

    /// The whole array for 2-D data; for 3-D data the middle slice along the
    /// slowest axis. Other dimensionalities have no slice.
    pub fn representative(d: &Dataset) -> Option<Slice2> {
        match *d.shape() {
            [r, c] => Some(Slice2 {
                rows: r,
                cols: c,
                data: d.values().to_vec(),
            }),
            [s, r, c] => {
                let start = (s / 2) * r * c;
                Some(Slice2 {
                    rows: r,
                    cols: c,
                    data: d.values()[start..start + r * c].to_vec(),
                })
            }
            _ => None,
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Mean SSIM over every 8x8 window (stride 1) with uniform weights and
/// population statistics. The dynamic range `L` is the range of `a`, or 1
/// when `a` is constant; `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`.
pub fn ssim(a: &Slice2, b: &Slice2) -> Result<f64> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::InvalidArgument("SSIM slices differ in size".into()));
    }
    if a.rows < SSIM_WINDOW || a.cols < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs both extents >= {SSIM_WINDOW}, got {}x{}",
            a.rows, a.cols
        )));
    }
    let mut l = value_range(&a.data);
    if l == 0.0 {
        l = 1.0;
    }
    let c1 = (0.01 * l) * (0.01 * l);
    let c2 = (0.03 * l) * (0.03 * l);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=a.rows - SSIM_WINDOW {
        for c0 in 0..=a.cols - SSIM_WINDOW {
            let (mut sa, mut sb) = (0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    sa += a.at(r, c);
                    sb += b.at(r, c);
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let da = a.at(r, c) - ma;
                    let db = b.at(r, c) - mb;
                    vaa += da * da;
                    vbb += db * db;
                    vab += da * db;
                }
            }
            let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
            let num = (2.0 * ma * mb + c1) * (2.0 * vab + c2);
            let den = (ma * ma + mb * mb + c1) * (vaa + vbb + c2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// SSIM of the representative slices, or `None` when the data has no
/// suitable 2-D slice.
pub fn dataset_ssim(original: &Dataset, decoded: &Dataset) -> Result<Option<f64>> {
    check_pair(original, decoded)?;
    match (
        Slice2::representative(original),
        Slice2::representative(decoded),
    ) {
        (Some(a), Some(b)) if a.rows >= SSIM_WINDOW && a.cols >= SSIM_WINDOW => {
            ssim(&a, &b).map(Some)
        }
        _ => Ok(None),
    }
}

/// Autocorrelation of `v` at `lag`, as the correlation coefficient between
/// `v[..n - lag]` and `v[lag..]`.
///
/// Each segment is centred on its own mean, so the result always lies in
/// `[-1, 1]` and a perfectly alternating series gives exactly `-1`. For long
/// series it agrees with the single-mean estimator to `O(lag / n)`. A
/// segment without variance gives 0 by convention.
pub fn autocorrelation(v: &[f64], lag: usize) -> Result<f64> {
    let n = v.len();
    if lag == 0 || lag >= n {
        return Err(Error::InvalidArgument(format!(
            "lag must be in [1, {n}), got {lag}"
        )));
    }
    let (head, tail) = (&v[..n - lag], &v[lag..]);
    let m = (n - lag) as f64;
    let mh = head.iter().sum::<f64>() / m;
    let mt = tail.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in head.iter().zip(tail) {
        let (dx, dy) = (x - mh, y - mt);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Autocorrelation at `lag` of the flattened row-major error series
/// `original - decoded`.
pub fn acf_error(original: &Dataset, decoded: &Dataset, lag: usize) -> Result<f64> {
    check_pair(original, decoded)?;
    let err: Vec<f64> = original
        .values()
        .iter()
        .zip(decoded.values())
        .map(|(a, b)| a - b)
        .collect();
    autocorrelation(&err, lag)
}

/// Quality of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// `None` when undefined (constant original with non-zero error).
    #[serde(with = "crate::report::float_text::option")]
    pub psnr: Option<f64>,
    pub rmse: f64,
    pub max_abs_error: f64,
    /// `None` for data without a 2-D slice of at least 8x8.
    pub ssim: Option<f64>,
    /// `None` for single-sample data.
    pub acf_error_lag1: Option<f64>,
    /// Compression ratio, when the compressed size is known.
    pub ratio: Option<f64>,
}

/// All metrics for one reconstruction; pass the payload size to fill in the
/// ratio.
pub fn quality_report(
    original: &Dataset,
    decoded: &Dataset,
    compressed_bytes: Option<usize>,
) -> Result<QualityReport> {
    check_pair(original, decoded)?;
    let psnr = match psnr(original, decoded) {
        Ok(p) => Some(p),
        Err(Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(QualityReport {
        psnr,
        rmse: rmse(original, decoded)?,
        max_abs_error: max_abs_error(original, decoded)?,
        ssim: dataset_ssim(original, decoded)?,
        acf_error_lag1: if original.len() > 1 {
            Some(acf_error(original, decoded, 1)?)
        } else {
            None
        },
        ratio: compressed_bytes
            .filter(|&b| b > 0)
            .map(|b| original.byte_size() as f64 / b as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ElementKind;

    fn ds(shape: Vec<usize>, v: Vec<f64>) -> Dataset {
        Dataset::from_values(shape, ElementKind::F64, v).unwrap()
    }

    #[test]
    fn psnr_reference_value() {
        // range 1, rmse 0.1 -> 20 dB
        let a = ds(vec![4], vec![0.0, 1.0, 0.0, 1.0]);
        let b = ds(vec![4], vec![0.1, 0.9, 0.1, 0.9]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!((rmse(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert!((max_abs_error(&a, &b).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn psnr_edge_cases() {
        let a = ds(vec![3], vec![1.0, 2.0, 3.0]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let c = ds(vec![3], vec![5.0; 3]);
        let c2 = ds(vec![3], vec![5.0, 5.0, 5.5]);
        assert!(psnr(&c, &c2).is_err());
        assert_eq!(quality_report(&c, &c2, None).unwrap().psnr, None);
        let wrong = ds(vec![2], vec![1.0, 2.0]);
        assert!(psnr(&a, &wrong).is_err());
    }

    #[test]
    fn ssim_identical_is_exactly_one() {
        let v: Vec<f64> = (0..16 * 12).map(|i| ((i * 37) % 11) as f64).collect();
        let s = Slice2::new(16, 12, v).unwrap();
        assert_eq!(ssim(&s, &s).unwrap(), 1.0);
        let c = Slice2::new(8, 8, vec![3.0; 64]).unwrap();
        assert_eq!(ssim(&c, &c).unwrap(), 1.0);
    }

    #[test]
    fn ssim_single_window_reference() {
        // One 8x8 window; a = ramp 0..63, b = a + 1 (pure luminance shift).
        let a: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        let (ma, mb) = (31.5, 32.5);
        let var = (0..64).map(|i| (i as f64 - ma).powi(2)).sum::<f64>() / 64.0;
        let (c1, c2) = ((0.01f64 * 63.0).powi(2), (0.03f64 * 63.0).powi(2));
        let expect = (2.0 * ma * mb + c1) * (2.0 * var + c2)
            / ((ma * ma + mb * mb + c1) * (2.0 * var + c2));
        let got = ssim(&Slice2::new(8, 8, a).unwrap(), &Slice2::new(8, 8, b).unwrap()).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.999_511_9).abs() < 1e-6);
    }

    #[test]
    fn ssim_small_slice_rejected() {
        let s = Slice2::new(7, 20, vec![0.0; 140]).unwrap();
        assert!(ssim(&s, &s).is_err());
    }

    #[test]
    fn representative_slice_is_middle() {
        let d = ds(vec![3, 2, 2], (0..12).map(|i| i as f64).collect());
        let s = Slice2::representative(&d).unwrap();
        assert_eq!(s.data, vec![4.0, 5.0, 6.0, 7.0]);
        assert!(Slice2::representative(&ds(vec![4], vec![0.0; 4])).is_none());
    }

    #[test]
    fn acf_reference_values() {
        for n in [3usize, 7, 100, 101] {
            let alt: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            assert!((autocorrelation(&alt, 1).unwrap() + 1.0).abs() < 1e-12, "n = {n}");
        }
        // a straight line is perfectly correlated with its shift
        let line: Vec<f64> = (0..10).map(|i| 3.0 * i as f64).collect();
        assert!((autocorrelation(&line, 3).unwrap() - 1.0).abs() < 1e-12);
        // 1,2,1,4: head 1,2,1 (mean 4/3), tail 2,1,4 (mean 7/3)
        // sxy = -1/3*-1/3 + 2/3*-4/3 + -1/3*5/3 = (1 - 8 - 5)/9 = -4/3
        // sxx = 6/9, syy = 42/9 -> r = -12 / sqrt(252)
        let r = autocorrelation(&[1.0, 2.0, 1.0, 4.0], 1).unwrap();
        assert!((r - (-12.0 / 252f64.sqrt())).abs() < 1e-15);
        assert_eq!(autocorrelation(&[2.0; 5], 1).unwrap(), 0.0);
        assert!(autocorrelation(&[1.0, 2.0], 2).is_err());
        assert!(autocorrelation(&[1.0, 2.0], 0).is_err());
        let a = ds(vec![4], vec![1.0, 2.0, 1.0, 4.0]);
        let b = ds(vec![4], vec![0.0; 4]);
        assert_eq!(acf_error(&a, &b, 1).unwrap(), r);
        assert_eq!(acf_error(&a, &a, 1).unwrap(), 0.0);
    }
}
