//! Synthetic cell-image generation, Sobel gradient extraction, patch
//! cropping and labeling, and the dataset file format.
//!
//! Images are grayscale squares with anti-aliased discs of smooth radial
//! falloff plus additive Gaussian noise, clamped to [0, 1]. Each image is
//! tiled into non-overlapping 15x15 patches; a patch is labeled a cell
//! when at least `LABEL_THRESHOLD` of its pixels lie inside a disc. The
//! network input is the complex gradient Ix + i*Iy, linearly normalized to
//! [0, 1] by a single affine map over the whole dataset (both components
//! jointly, so relative magnitudes between patches survive).

use std::io::{Read, Write};
use std::path::Path;

use crate::complex::Complex;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{ComplexTensor, RealTensor};

pub const PATCH_SIZE: usize = 15;
pub const LABEL_THRESHOLD: u32 = 10;

const CCDS_MAGIC: &[u8; 4] = b"CCDS";
const CCDS_VERSION: u32 = 1;

/// Generator parameters for one dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct CellImageParams {
    pub image_size: usize,
    pub cell_count: (usize, usize),
    pub cell_radius: (f64, f64),
    pub intensity: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for CellImageParams {
    fn default() -> Self {
        CellImageParams {
            image_size: 150,
            cell_count: (6, 14),
            cell_radius: (4.0, 6.0),
            intensity: (0.55, 1.0),
            noise_sigma: 0.06,
            seed: 42,
        }
    }
}

impl CellImageParams {
    pub fn validate(&self) -> Result<()> {
        if !self.image_size.is_multiple_of(PATCH_SIZE) {
            return Err(Error::InvalidArgument(format!(
                "image size {} must be divisible by the patch size {PATCH_SIZE}",
                self.image_size
            )));
        }
        if self.cell_radius.0 < 1.0 || self.cell_radius.1 < self.cell_radius.0 {
            return Err(Error::InvalidArgument(format!(
                "cell radii must satisfy 1 <= min <= max, got {:?}",
                self.cell_radius
            )));
        }
        if self.cell_count.1 < self.cell_count.0 {
            return Err(Error::InvalidArgument(format!(
                "cell count range is inverted: {:?}",
                self.cell_count
            )));
        }
        if 2.0 * self.cell_radius.1 + 2.0 >= self.image_size as f64 {
            return Err(Error::InvalidArgument(
                "cells do not fit inside the image".into(),
            ));
        }
        Ok(())
    }
}

/// One rendered disc.
#[derive(Debug, Clone, Copy)]
struct Disc {
    row: f64,
    col: f64,
    radius: f64,
    intensity: f64,
}

/// Render one grayscale image and its cell mask. The mask marks pixels
/// whose center lies inside any disc; intensities fall off smoothly as
/// (1 - (d/r)^2)^2 toward the disc edge.
pub fn generate_cell_image(p: &CellImageParams, rng: &mut Rng) -> (RealTensor, Vec<bool>) {
    let size = p.image_size;
    let n_cells = rng.int_in(p.cell_count.0, p.cell_count.1);
    let discs: Vec<Disc> = (0..n_cells)
        .map(|_| {
            let radius = rng.uniform_in(p.cell_radius.0, p.cell_radius.1);
            // Keep every disc fully inside the image.
            let lo = radius + 1.0;
            let hi = size as f64 - radius - 1.0;
            Disc {
                row: rng.uniform_in(lo, hi),
                col: rng.uniform_in(lo, hi),
                radius,
                intensity: rng.uniform_in(p.intensity.0, p.intensity.1),
            }
        })
        .collect();

    let mut image = RealTensor::zeros(&[size, size]);
    let mut mask = vec![false; size * size];
    for disc in &discs {
        let r0 = (disc.row - disc.radius).floor().max(0.0) as usize;
        let r1 = ((disc.row + disc.radius).ceil() as usize).min(size - 1);
        let c0 = (disc.col - disc.radius).floor().max(0.0) as usize;
        let c1 = ((disc.col + disc.radius).ceil() as usize).min(size - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let d = ((r as f64 - disc.row).powi(2) + (c as f64 - disc.col).powi(2)).sqrt();
                if d <= disc.radius {
                    mask[r * size + c] = true;
                }
                let t = d / disc.radius;
                if t < 1.0 {
                    let falloff = (1.0 - t * t).powi(2);
                    image.data_mut()[r * size + c] += disc.intensity * falloff;
                }
            }
        }
    }
    for v in image.data_mut() {
        *v += p.noise_sigma * rng.gaussian();
        *v = v.clamp(0.0, 1.0);
    }
    (image, mask)
}

/// Horizontal and vertical derivatives by Sobel correlation with
/// edge-replicated borders, so the outputs match the input size.
pub fn sobel_gradients(image: &RealTensor) -> Result<(RealTensor, RealTensor)> {
    if image.ndim() != 2 || image.shape()[0] < 3 || image.shape()[1] < 3 {
        return Err(Error::InvalidArgument(format!(
            "Sobel needs a 2-D image of at least 3x3, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let sample = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        image.data()[r * w + c]
    };
    const GX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut ix = RealTensor::zeros(&[h, w]);
    let mut iy = RealTensor::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for (dr, row) in GX.iter().enumerate() {
                for (dc, &wgt) in row.iter().enumerate() {
                    let v = sample(r as isize + dr as isize - 1, c as isize + dc as isize - 1);
                    gx += wgt * v;
                    // Gy is the transposed kernel.
                    gy += GX[dc][dr] * v;
                }
            }
            ix.data_mut()[r * w + c] = gx;
            iy.data_mut()[r * w + c] = gy;
        }
    }
    Ok((ix, iy))
}

/// One labeled input patch.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    /// Normalized gradients as a (1, 15, 15) complex tensor, Ix + i*Iy.
    pub gradients: ComplexTensor,
    pub is_cell: bool,
    pub cell_pixel_count: u16,
}

impl LabeledPatch {
    pub fn label(&self) -> usize {
        usize::from(self.is_cell)
    }
}

/// How a dataset was produced, including the normalization map actually
/// applied (v -> (v - norm_min) / (norm_max - norm_min)).
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub params: CellImageParams,
    pub images: usize,
    pub norm_min: f64,
    pub norm_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub patches: Vec<LabeledPatch>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.patches.iter().map(LabeledPatch::label).collect()
    }

    pub fn inputs(&self) -> Vec<&ComplexTensor> {
        self.patches.iter().map(|p| &p.gradients).collect()
    }

    /// Stack each complex patch as a (2, 15, 15) real tensor with channel
    /// 0 the real part (Ix) and channel 1 the imaginary part (Iy).
    pub fn to_real_stacked(&self) -> Vec<RealTensor> {
        self.patches
            .iter()
            .map(|p| crate::equivalence::realify_tensor(&p.gradients))
            .collect()
    }

    pub fn cell_fraction(&self) -> f64 {
        if self.patches.is_empty() {
            return 0.0;
        }
        self.patches.iter().filter(|p| p.is_cell).count() as f64 / self.patches.len() as f64
    }
}

/// Seeds for the train and test streams of one base seed; the streams are
/// disjoint, so the splits never share an image.
pub fn split_seeds(base: u64) -> (u64, u64) {
    (derive_seed(base, 0x7261_696e), derive_seed(base, 0x7465_7374))
}

/// Generate `images` cell images and crop them into labeled patches.
/// Per-image randomness comes from sub-seeds derived as
/// `derive_seed(params.seed, image_index)`.
pub fn make_dataset(images: usize, p: &CellImageParams) -> Result<Dataset> {
    p.validate()?;
    let size = p.image_size;
    let tiles = size / PATCH_SIZE;

    struct RawPatch {
        ix: Vec<f64>,
        iy: Vec<f64>,
        cell_pixels: u32,
    }
    let mut raw: Vec<RawPatch> = Vec::with_capacity(images * tiles * tiles);

    for image_index in 0..images {
        let mut rng = Rng::seed_from(derive_seed(p.seed, image_index as u64));
        let (image, mask) = generate_cell_image(p, &mut rng);
        let (ix, iy) = sobel_gradients(&image)?;
        for tr in 0..tiles {
            for tc in 0..tiles {
                let mut patch_ix = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
                let mut patch_iy = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
                let mut cell_pixels = 0u32;
                for r in 0..PATCH_SIZE {
                    for c in 0..PATCH_SIZE {
                        let (gr, gc) = (tr * PATCH_SIZE + r, tc * PATCH_SIZE + c);
                        patch_ix.push(ix.data()[gr * size + gc]);
                        patch_iy.push(iy.data()[gr * size + gc]);
                        if mask[gr * size + gc] {
                            cell_pixels += 1;
                        }
                    }
                }
                raw.push(RawPatch {
                    ix: patch_ix,
                    iy: patch_iy,
                    cell_pixels,
                });
            }
        }
    }

    // One global affine map over both components of every patch.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for patch in &raw {
        for v in patch.ix.iter().chain(&patch.iy) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };

    let patches = raw
        .into_iter()
        .map(|patch| {
            let data: Vec<Complex> = patch
                .ix
                .iter()
                .zip(&patch.iy)
                .map(|(&x, &y)| Complex::new((x - lo) * scale, (y - lo) * scale))
                .collect();
            Ok(LabeledPatch {
                gradients: ComplexTensor::from_vec(&[1, PATCH_SIZE, PATCH_SIZE], data)?,
                is_cell: patch.cell_pixels >= LABEL_THRESHOLD,
                cell_pixel_count: patch.cell_pixels.min(u32::from(u16::MAX)) as u16,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        patches,
        provenance: Provenance {
            params: p.clone(),
            images,
            norm_min: lo,
            norm_max: hi,
        },
    })
}

// ---- file format -----------------------------------------------------------

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serialize the patches to the binary dataset format: a header (magic,
/// version, patch count, patch size, label threshold) followed by one
/// record per patch (15*15 little-endian (re, im) f64 pairs, a label byte,
/// and a 2-byte cell-pixel count).
pub fn encode_dataset(dataset: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CCDS_MAGIC);
    push_u32(&mut buf, CCDS_VERSION);
    push_u32(&mut buf, dataset.patches.len() as u32);
    push_u32(&mut buf, PATCH_SIZE as u32);
    push_u32(&mut buf, LABEL_THRESHOLD);
    for patch in &dataset.patches {
        for z in patch.gradients.data() {
            push_f64(&mut buf, z.re);
            push_f64(&mut buf, z.im);
        }
        buf.push(u8::from(patch.is_cell));
        buf.extend_from_slice(&patch.cell_pixel_count.to_le_bytes());
    }
    buf
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode_dataset(dataset))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                what,
                detail: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parse the binary dataset format. Provenance travels in the sidecar text
/// file, so the returned dataset carries placeholder provenance unless the
/// caller restores it.
pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<LabeledPatch>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "dataset header")?;
    if magic != CCDS_MAGIC {
        return Err(Error::Format {
            what: "dataset header",
            detail: format!("bad magic {magic:?}"),
        });
    }
    let version = r.u32("dataset header")?;
    if version != CCDS_VERSION {
        return Err(Error::Format {
            what: "dataset header",
            detail: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("dataset header")? as usize;
    let patch_size = r.u32("dataset header")? as usize;
    if patch_size != PATCH_SIZE {
        return Err(Error::Format {
            what: "dataset header",
            detail: format!("unsupported patch size {patch_size}"),
        });
    }
    let _threshold = r.u32("dataset header")?;
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let mut data = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
        for _ in 0..PATCH_SIZE * PATCH_SIZE {
            let re = r.f64("patch record")?;
            let im = r.f64("patch record")?;
            data.push(Complex::new(re, im));
        }
        let label = r.take(1, "patch record")?[0];
        let cell_pixel_count =
            u16::from_le_bytes(r.take(2, "patch record")?.try_into().unwrap());
        patches.push(LabeledPatch {
            gradients: ComplexTensor::from_vec(&[1, PATCH_SIZE, PATCH_SIZE], data)?,
            is_cell: label != 0,
            cell_pixel_count,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            what: "dataset file",
            detail: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(patches)
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledPatch>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

/// Provenance as the key=value sidecar text.
pub fn provenance_to_text(p: &Provenance) -> String {
    let c = &p.params;
    format!(
        "image_size={}\ncells_min={}\ncells_max={}\nradius_min={}\nradius_max={}\n\
         intensity_min={}\nintensity_max={}\nnoise_sigma={}\nseed={}\nimages={}\n\
         norm_min={:e}\nnorm_max={:e}\n",
        c.image_size,
        c.cell_count.0,
        c.cell_count.1,
        c.cell_radius.0,
        c.cell_radius.1,
        c.intensity.0,
        c.intensity.1,
        c.noise_sigma,
        c.seed,
        p.images,
        p.norm_min,
        p.norm_max
    )
}
