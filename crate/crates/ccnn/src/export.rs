//! Kernel export for the first convolution layer: per kernel a CSV of the
//! conjugated complex entries, a magnitude map (PGM), a phase map (PPM,
//! hue = phase, value = normalized magnitude), and a text sidecar with the
//! mean magnitude and the global phase that maximizes the summed real part
//! of the entries.
//!
//! A convolution measures similarity between input patches and the
//! conjugate of its kernel, so the conjugated entries are what resemble
//! the structures the kernel responds to; and since kernels differing by
//! a global phase are functionally equivalent up to the projection, the
//! sidecar's phase constant pins a canonical display orientation.

use std::path::{Path, PathBuf};

use crate::checkpoint::{Checkpoint, ModelState};
use crate::complex::Complex;
use crate::error::{Error, Result};
use crate::network::Layer;
use crate::tensor::ComplexTensor;

/// Everything exported for one kernel.
#[derive(Debug, Clone)]
pub struct KernelExport {
    pub index: usize,
    /// Conjugated kernel entries, (in_channels, kh, kw).
    pub conjugated: ComplexTensor,
    pub mean_magnitude: f64,
    /// The C maximizing sum_j Re(e^{iC} z_j) over the conjugated entries.
    pub phase_constant: f64,
}

/// First-layer kernels of a complex checkpoint, conjugated for display.
pub fn first_layer_kernels(cp: &Checkpoint) -> Result<Vec<KernelExport>> {
    let net = match &cp.model {
        ModelState::Complex { net, .. } => net,
        ModelState::Real { .. } => {
            return Err(Error::InvalidArgument(
                "kernel export needs a complex checkpoint".into(),
            ))
        }
    };
    let conv = net
        .layers
        .iter()
        .find_map(|l| match l {
            Layer::Conv(w) => Some(w),
            _ => None,
        })
        .ok_or_else(|| Error::InvalidArgument("network has no convolution layer".into()))?;
    Ok((0..conv.out_channels())
        .map(|k| {
            let conjugated = conv.kernel(k).conj();
            let mean_magnitude = conjugated
                .data()
                .iter()
                .map(|z| z.magnitude())
                .sum::<f64>()
                / conjugated.len() as f64;
            let total: Complex = conjugated.data().iter().copied().sum();
            // Re(e^{iC} * total) is maximal at C = -arg(total).
            let phase_constant = -total.arg();
            KernelExport {
                index: k,
                conjugated,
                mean_magnitude,
                phase_constant,
            }
        })
        .collect())
}

/// CSV of the conjugated entries, one row per coefficient.
pub fn kernel_csv(k: &KernelExport) -> String {
    let shape = k.conjugated.shape();
    let (ic, kh, kw) = (shape[0], shape[1], shape[2]);
    let mut out = String::from("channel,row,col,re,im\n");
    for c in 0..ic {
        for r in 0..kh {
            for col in 0..kw {
                let z = k.conjugated.at(&[c, r, col]);
                out.push_str(&format!("{c},{r},{col},{},{}\n", z.re, z.im));
            }
        }
    }
    out
}

/// Parse the CSV back into (in_channels, kh, kw) entries; the round trip
/// is exact because floats are written in shortest round-trip form.
pub fn parse_kernel_csv(text: &str) -> Result<ComplexTensor> {
    let mut cells: Vec<(usize, usize, usize, Complex)> = Vec::new();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != "channel,row,col,re,im" {
        return Err(Error::Format {
            what: "kernel csv",
            detail: format!("unexpected header {header:?}"),
        });
    }
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format {
                what: "kernel csv",
                detail: format!("expected 5 fields, got {line:?}"),
            });
        }
        let parse_u = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Format {
                what: "kernel csv",
                detail: format!("bad index {s:?}"),
            })
        };
        let parse_f = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Format {
                what: "kernel csv",
                detail: format!("bad float {s:?}"),
            })
        };
        cells.push((
            parse_u(fields[0])?,
            parse_u(fields[1])?,
            parse_u(fields[2])?,
            Complex::new(parse_f(fields[3])?, parse_f(fields[4])?),
        ));
    }
    let ic = cells.iter().map(|c| c.0).max().map_or(0, |m| m + 1);
    let kh = cells.iter().map(|c| c.1).max().map_or(0, |m| m + 1);
    let kw = cells.iter().map(|c| c.2).max().map_or(0, |m| m + 1);
    if cells.len() != ic * kh * kw {
        return Err(Error::Format {
            what: "kernel csv",
            detail: format!("{} cells for shape ({ic},{kh},{kw})", cells.len()),
        });
    }
    let mut out = ComplexTensor::zeros(&[ic, kh, kw]);
    for (c, r, col, z) in cells {
        out.set(&[c, r, col], z);
    }
    Ok(out)
}

fn max_magnitude(entries: &ComplexTensor) -> f64 {
    entries
        .data()
        .iter()
        .map(|z| z.magnitude())
        .fold(0.0, f64::max)
}

/// Binary PGM (P5) of per-entry magnitudes, normalized per kernel so the
/// largest magnitude maps to 255. Multi-channel kernels stack channels
/// vertically.
pub fn kernel_magnitude_pgm(k: &KernelExport) -> Vec<u8> {
    let shape = k.conjugated.shape();
    let (ic, kh, kw) = (shape[0], shape[1], shape[2]);
    let (w, h) = (kw, ic * kh);
    let max = max_magnitude(&k.conjugated);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for z in k.conjugated.data() {
        let v = if max > 0.0 {
            (z.magnitude() / max * 255.0).round() as u8
        } else {
            0
        };
        out.push(v);
    }
    out
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as u32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Binary PPM (P6) phase map: hue encodes the phase over a fixed wheel
/// (-pi..pi to hue 0..1), brightness the per-kernel normalized magnitude.
pub fn kernel_phase_ppm(k: &KernelExport) -> Vec<u8> {
    let shape = k.conjugated.shape();
    let (ic, kh, kw) = (shape[0], shape[1], shape[2]);
    let (w, h) = (kw, ic * kh);
    let max = max_magnitude(&k.conjugated);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for z in k.conjugated.data() {
        let hue = (z.arg() + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
        let value = if max > 0.0 { z.magnitude() / max } else { 0.0 };
        out.extend_from_slice(&hsv_to_rgb(hue, 1.0, value));
    }
    out
}

pub fn kernel_sidecar(k: &KernelExport) -> String {
    format!(
        "kernel={}\nmean_magnitude={}\nphase_constant={}\n",
        k.index, k.mean_magnitude, k.phase_constant
    )
}

/// Write all four artifacts per first-layer kernel into `out_dir`;
/// returns the paths written.
pub fn export_kernels(cp: &Checkpoint, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for k in first_layer_kernels(cp)? {
        let base = out_dir.join(format!("kernel_{:02}", k.index));
        let csv = base.with_extension("csv");
        std::fs::write(&csv, kernel_csv(&k))?;
        written.push(csv);
        let pgm = base.with_extension("pgm");
        std::fs::write(&pgm, kernel_magnitude_pgm(&k))?;
        written.push(pgm);
        let ppm = base.with_extension("ppm");
        std::fs::write(&ppm, kernel_phase_ppm(&k))?;
        written.push(ppm);
        let txt = base.with_extension("txt");
        std::fs::write(&txt, kernel_sidecar(&k))?;
        written.push(txt);
    }
    Ok(written)
}

/// A synthetic cell-center gradient patch: the field of unit vectors
/// pointing away from the patch center, magnitude-weighted by a radial
/// ring profile. Used by tests and the demo example.
pub fn radial_gradient_patch(size: usize, ring_radius: f64) -> ComplexTensor {
    let mut out = ComplexTensor::zeros(&[1, size, size]);
    let center = (size as f64 - 1.0) / 2.0;
    for r in 0..size {
        for c in 0..size {
            let dy = r as f64 - center;
            let dx = c as f64 - center;
            let d = (dx * dx + dy * dy).sqrt();
            let weight = (-((d - ring_radius) * (d - ring_radius)) / 2.0).exp();
            let angle = dy.atan2(dx);
            out.set(&[0, r, c], Complex::from_polar(weight, angle));
        }
    }
    out
}
