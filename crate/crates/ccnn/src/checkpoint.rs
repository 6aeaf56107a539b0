//! Versioned binary checkpoints: network spec, weight tensors, optimizer
//! state, iteration counter, and generator state, round-tripping
//! bit-exactly so a resumed run continues the uninterrupted stream.

use std::io::{Read, Write};
use std::path::Path;

use crate::complex::Complex;
use crate::equivalence::{RealLayerSpec, RealNetwork, RealNetworkSpec};
use crate::error::{Error, Result};
use crate::layers::{PoolKind, PoolSpec, ProjectionKind, SectorParams};
use crate::network::{ComplexNetwork, LayerSpec, NetworkSpec};
use crate::tensor::{ComplexTensor, RealTensor};

const MAGIC: &[u8; 4] = b"CCNN";
const VERSION: u32 = 1;

/// Weights and optimizer state of either model family.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelState {
    Complex {
        net: ComplexNetwork,
        momentum: Vec<ComplexTensor>,
    },
    Real {
        net: RealNetwork,
        momentum: Vec<RealTensor>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub rng_state: [u64; 4],
    pub model: ModelState,
}

impl Checkpoint {
    pub fn model_name(&self) -> &'static str {
        match self.model {
            ModelState::Complex { .. } => "complex",
            ModelState::Real { .. } => "real",
        }
    }
}

// ---- encoding ---------------------------------------------------------------

struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize32(&mut self, v: usize) {
        self.u32(v as u32);
    }

    fn complex_tensor(&mut self, t: &ComplexTensor) {
        self.usize32(t.shape().len());
        for &d in t.shape() {
            self.usize32(d);
        }
        for z in t.data() {
            self.f64(z.re);
            self.f64(z.im);
        }
    }

    fn real_tensor(&mut self, t: &RealTensor) {
        self.usize32(t.shape().len());
        for &d in t.shape() {
            self.usize32(d);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

fn encode_complex_spec(enc: &mut Enc, spec: &NetworkSpec) {
    for &d in &spec.input_shape {
        enc.usize32(d);
    }
    enc.usize32(spec.layers.len());
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
            } => {
                enc.u8(0);
                enc.usize32(*out_channels);
                enc.usize32(kernel.0);
                enc.usize32(kernel.1);
                enc.usize32(*stride);
            }
            LayerSpec::SectorRelu(p) => {
                enc.u8(1);
                enc.f64(p.theta1);
                enc.f64(p.theta2);
            }
            LayerSpec::Pool(p) => {
                enc.u8(2);
                let (kind, alpha) = match p.kind {
                    PoolKind::MaxMagnitude => (0u8, 0.0),
                    PoolKind::Softmax(a) => (1, a),
                    PoolKind::DualSoftmax(a) => (2, a),
                    PoolKind::GlobalMaxMagnitude => (3, 0.0),
                };
                enc.u8(kind);
                enc.usize32(p.window.0);
                enc.usize32(p.window.1);
                enc.usize32(p.stride);
                enc.f64(alpha);
            }
            LayerSpec::Projection(kind) => {
                enc.u8(3);
                enc.u8(match kind {
                    ProjectionKind::Magnitude => 0,
                    ProjectionKind::SquaredMagnitude => 1,
                });
            }
        }
    }
}

fn encode_real_spec(enc: &mut Enc, spec: &RealNetworkSpec) {
    for &d in &spec.input_shape {
        enc.usize32(d);
    }
    enc.usize32(spec.layers.len());
    for layer in &spec.layers {
        match layer {
            RealLayerSpec::Conv {
                out_channels,
                kernel,
                stride,
            } => {
                enc.u8(0);
                enc.usize32(*out_channels);
                enc.usize32(kernel.0);
                enc.usize32(kernel.1);
                enc.usize32(*stride);
            }
            RealLayerSpec::Relu => enc.u8(1),
            RealLayerSpec::MaxPool { window, stride } => {
                enc.u8(2);
                enc.usize32(window.0);
                enc.usize32(window.1);
                enc.usize32(*stride);
            }
            RealLayerSpec::GlobalMaxPool => enc.u8(3),
            RealLayerSpec::Affine { out_dim } => {
                enc.u8(4);
                enc.usize32(*out_dim);
            }
        }
    }
}

pub fn encode_checkpoint(cp: &Checkpoint) -> Vec<u8> {
    let mut enc = Enc { buf: Vec::new() };
    enc.buf.extend_from_slice(MAGIC);
    enc.u32(VERSION);
    enc.u8(match cp.model {
        ModelState::Complex { .. } => 0,
        ModelState::Real { .. } => 1,
    });
    enc.u64(cp.iteration);
    for &s in &cp.rng_state {
        enc.u64(s);
    }
    match &cp.model {
        ModelState::Complex { net, momentum } => {
            encode_complex_spec(&mut enc, &net.spec);
            let params = net.param_tensors();
            enc.usize32(params.len());
            for t in &params {
                enc.complex_tensor(t);
            }
            enc.usize32(momentum.len());
            for t in momentum {
                enc.complex_tensor(t);
            }
        }
        ModelState::Real { net, momentum } => {
            encode_real_spec(&mut enc, &net.spec);
            let params = net.param_tensors();
            enc.usize32(params.len());
            for t in &params {
                enc.real_tensor(t);
            }
            enc.usize32(momentum.len());
            for t in momentum {
                enc.real_tensor(t);
            }
        }
    }
    enc.buf
}

// ---- decoding ---------------------------------------------------------------

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn complex_tensor(&mut self) -> Result<ComplexTensor> {
        let ndim = self.usize32()?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.usize32()?);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let re = self.f64()?;
            let im = self.f64()?;
            data.push(Complex::new(re, im));
        }
        ComplexTensor::from_vec(&shape, data)
    }

    fn real_tensor(&mut self) -> Result<RealTensor> {
        let ndim = self.usize32()?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.usize32()?);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.f64()?);
        }
        RealTensor::from_vec(&shape, data)
    }
}

fn decode_complex_spec(dec: &mut Dec) -> Result<NetworkSpec> {
    let input_shape = [dec.usize32()?, dec.usize32()?, dec.usize32()?];
    let n_layers = dec.usize32()?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(match dec.u8()? {
            0 => LayerSpec::Conv {
                out_channels: dec.usize32()?,
                kernel: (dec.usize32()?, dec.usize32()?),
                stride: dec.usize32()?,
            },
            1 => {
                let theta1 = dec.f64()?;
                let theta2 = dec.f64()?;
                LayerSpec::SectorRelu(SectorParams::new(theta1, theta2)?)
            }
            2 => {
                let kind_tag = dec.u8()?;
                let window = (dec.usize32()?, dec.usize32()?);
                let stride = dec.usize32()?;
                let alpha = dec.f64()?;
                let kind = match kind_tag {
                    0 => PoolKind::MaxMagnitude,
                    1 => PoolKind::Softmax(alpha),
                    2 => PoolKind::DualSoftmax(alpha),
                    3 => PoolKind::GlobalMaxMagnitude,
                    other => {
                        return Err(Error::Format {
                            what: "checkpoint",
                            detail: format!("unknown pool kind {other}"),
                        })
                    }
                };
                LayerSpec::Pool(PoolSpec {
                    window,
                    stride,
                    kind,
                })
            }
            3 => LayerSpec::Projection(match dec.u8()? {
                0 => ProjectionKind::Magnitude,
                1 => ProjectionKind::SquaredMagnitude,
                other => {
                    return Err(Error::Format {
                        what: "checkpoint",
                        detail: format!("unknown projection kind {other}"),
                    })
                }
            }),
            other => {
                return Err(Error::Format {
                    what: "checkpoint",
                    detail: format!("unknown layer tag {other}"),
                })
            }
        });
    }
    Ok(NetworkSpec {
        input_shape,
        layers,
    })
}

fn decode_real_spec(dec: &mut Dec) -> Result<RealNetworkSpec> {
    let input_shape = [dec.usize32()?, dec.usize32()?, dec.usize32()?];
    let n_layers = dec.usize32()?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(match dec.u8()? {
            0 => RealLayerSpec::Conv {
                out_channels: dec.usize32()?,
                kernel: (dec.usize32()?, dec.usize32()?),
                stride: dec.usize32()?,
            },
            1 => RealLayerSpec::Relu,
            2 => RealLayerSpec::MaxPool {
                window: (dec.usize32()?, dec.usize32()?),
                stride: dec.usize32()?,
            },
            3 => RealLayerSpec::GlobalMaxPool,
            4 => RealLayerSpec::Affine {
                out_dim: dec.usize32()?,
            },
            other => {
                return Err(Error::Format {
                    what: "checkpoint",
                    detail: format!("unknown layer tag {other}"),
                })
            }
        });
    }
    Ok(RealNetworkSpec {
        input_shape,
        layers,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut dec = Dec { buf: bytes, pos: 0 };
    if dec.take(4)? != MAGIC {
        return Err(Error::Format {
            what: "checkpoint",
            detail: "bad magic".into(),
        });
    }
    let version = dec.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            what: "checkpoint",
            detail: format!("unsupported version {version}"),
        });
    }
    let model_tag = dec.u8()?;
    let iteration = dec.u64()?;
    let rng_state = [dec.u64()?, dec.u64()?, dec.u64()?, dec.u64()?];
    let model = match model_tag {
        0 => {
            let spec = decode_complex_spec(&mut dec)?;
            let n = dec.usize32()?;
            let params: Vec<ComplexTensor> = (0..n)
                .map(|_| dec.complex_tensor())
                .collect::<Result<_>>()?;
            let m = dec.usize32()?;
            let momentum: Vec<ComplexTensor> = (0..m)
                .map(|_| dec.complex_tensor())
                .collect::<Result<_>>()?;
            let mut net = ComplexNetwork::init(&spec, &mut crate::rng::Rng::seed_from(0))?;
            net.set_param_tensors(&params)?;
            ModelState::Complex { net, momentum }
        }
        1 => {
            let spec = decode_real_spec(&mut dec)?;
            let n = dec.usize32()?;
            let params: Vec<RealTensor> =
                (0..n).map(|_| dec.real_tensor()).collect::<Result<_>>()?;
            let m = dec.usize32()?;
            let momentum: Vec<RealTensor> =
                (0..m).map(|_| dec.real_tensor()).collect::<Result<_>>()?;
            let mut net = RealNetwork::init(&spec, &mut crate::rng::Rng::seed_from(0))?;
            net.set_param_tensors(&params)?;
            ModelState::Real { net, momentum }
        }
        other => {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("unknown model tag {other}"),
            })
        }
    };
    if dec.pos != bytes.len() {
        return Err(Error::Format {
            what: "checkpoint",
            detail: format!("{} trailing bytes", bytes.len() - dec.pos),
        });
    }
    Ok(Checkpoint {
        iteration,
        rng_state,
        model,
    })
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode_checkpoint(cp))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
