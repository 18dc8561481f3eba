//! Model checkpoints.
//!
//! Format "PSM1", little-endian throughout:
//!
//! ```text
//! offset  field
//! 0       magic "PSM1"
//! 4       u32 version (1)
//! 8       u32 depth, width, kernel, in_channels, out_channels
//! 28      f64 bn_epsilon, bn_momentum
//! 44      f64 x_min[4], x_max[4]         (normalization bounds)
//! 108     u32 tensor count
//! 112     tensors, each: u32 name_len, name, u32 ndim, u32 dims[ndim],
//!         f32 data (row-major)
//! ```
//!
//! Tensors appear in layer order: `convNN.w`, `convNN.b` where present, and
//! `bnNN.gamma` / `.beta` / `.running_mean` / `.running_var` after the conv
//! they follow. The loader derives the expected names and shapes from the
//! header's configuration and audits every tensor against them, so a
//! checkpoint cannot silently load into a mismatched architecture.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;


use crate::dataset::NormStats;
use crate::error::{Error, Result};

use super::network::{Network, NetworkModel};
use super::NetConfig;

const MAGIC: [u8; 4] = *b"PSM1";
const VERSION: u32 = 1;

/// Expected tensor order for a configuration: (name, shape).
fn tensor_manifest(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let k = cfg.kernel;
    for i in 0..cfg.depth {
        let (ci, co) = (cfg.layer_in(i), cfg.layer_out(i));
        out.push((format!("conv{i:02}.w"), vec![co, ci, k, k]));
        if cfg.layer_has_bias(i) {
            out.push((format!("conv{i:02}.b"), vec![co]));
        }
        if i >= 1 && i < cfg.depth - 1 {
            for part in ["gamma", "beta", "running_mean", "running_var"] {
                out.push((format!("bn{i:02}.{part}"), vec![co]));
            }
        }
    }
    out
}

/// Flat f32 views of the model's tensors, in manifest order.
fn tensor_data(net: &Network<f32>) -> Vec<&[f32]> {
    let mut out = Vec::new();
    for (i, conv) in net.convs.iter().enumerate() {
        out.push(conv.w.as_slice().expect("standard layout"));
        if let Some(b) = &conv.b {
            out.push(b.as_slice().unwrap());
        }
        if i >= 1 && i < net.config.depth - 1 {
            let bn = &net.bns[i - 1];
            out.push(bn.gamma.as_slice().unwrap());
            out.push(bn.beta.as_slice().unwrap());
            out.push(bn.running_mean.as_slice().unwrap());
            out.push(bn.running_var.as_slice().unwrap());
        }
    }
    out
}

pub fn write_model(path: impl AsRef<Path>, model: &NetworkModel) -> Result<()> {
    let path = path.as_ref();
    model.net.config.validate()?;
    model.norm.validate()?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(&MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    let cfg = &model.net.config;
    for v in [cfg.depth, cfg.width, cfg.kernel, cfg.in_channels, cfg.out_channels] {
        w.write_all(&(v as u32).to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&cfg.bn_epsilon.to_le_bytes()).map_err(io_err)?;
    w.write_all(&cfg.bn_momentum.to_le_bytes()).map_err(io_err)?;
    for v in model.norm.x_min.iter().chain(&model.norm.x_max) {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }

    let manifest = tensor_manifest(cfg);
    let data = tensor_data(&model.net);
    debug_assert_eq!(manifest.len(), data.len());
    w.write_all(&(manifest.len() as u32).to_le_bytes()).map_err(io_err)?;
    for ((name, shape), values) in manifest.iter().zip(&data) {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io_err)?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
        }
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        for v in *values {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

struct CkptReader<'p, R> {
    inner: R,
    path: &'p Path,
}

impl<R: Read> CkptReader<'_, R> {
    fn fail(&self, detail: String) -> Error {
        Error::Checkpoint {
            path: self.path.into(),
            detail,
        }
    }

    fn bytes<const N: usize>(&mut self, context: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.fail(format!("truncated while reading {context}: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, context: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(context)?))
    }

    fn f64(&mut self, context: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(context)?))
    }
}

pub fn read_model(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = CkptReader {
        inner: BufReader::new(file),
        path,
    };

    let magic: [u8; 4] = r.bytes("magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}, expected {VERSION}")));
    }
    let cfg = NetConfig {
        depth: r.u32("depth")? as usize,
        width: r.u32("width")? as usize,
        kernel: r.u32("kernel")? as usize,
        in_channels: r.u32("in_channels")? as usize,
        out_channels: r.u32("out_channels")? as usize,
        bn_epsilon: r.f64("bn_epsilon")?,
        bn_momentum: r.f64("bn_momentum")?,
    };
    cfg.validate()?;
    let mut norm = NormStats {
        x_min: [0.0; 4],
        x_max: [0.0; 4],
    };
    for b in 0..4 {
        norm.x_min[b] = r.f64("norm stats")?;
    }
    for b in 0..4 {
        norm.x_max[b] = r.f64("norm stats")?;
    }
    norm.validate()?;

    let manifest = tensor_manifest(&cfg);
    let count = r.u32("tensor count")? as usize;
    if count != manifest.len() {
        return Err(r.fail(format!(
            "{count} tensors in file, configuration requires {}",
            manifest.len()
        )));
    }

    let mut net = Network::<f32>::zeros(&cfg)?;
    {
        let mut targets = checkpoint_slices(&mut net);
        debug_assert_eq!(targets.len(), manifest.len());
        for ((name, shape), target) in manifest.iter().zip(targets.iter_mut()) {
            let name_len = r.u32("tensor name length")? as usize;
            if name_len > 256 {
                return Err(r.fail(format!("tensor name length {name_len} is implausible")));
            }
            let mut name_buf = vec![0u8; name_len];
            r.inner
                .read_exact(&mut name_buf)
                .map_err(|e| r.fail(format!("truncated while reading tensor name: {e}")))?;
            let found = String::from_utf8_lossy(&name_buf).into_owned();
            if found != *name {
                return Err(r.fail(format!("expected tensor `{name}`, found `{found}`")));
            }
            let ndim = r.u32(name)? as usize;
            if ndim != shape.len() {
                return Err(r.fail(format!(
                    "tensor `{name}` has {ndim} dimensions, expected {}",
                    shape.len()
                )));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32(name)? as usize);
            }
            if dims != *shape {
                return Err(r.fail(format!(
                    "tensor `{name}` has shape {dims:?}, expected {shape:?}"
                )));
            }
            let mut raw = vec![0u8; target.len() * 4];
            r.inner
                .read_exact(&mut raw)
                .map_err(|e| r.fail(format!("truncated while reading tensor `{name}`: {e}")))?;
            for (t, chunk) in target.iter_mut().zip(raw.chunks_exact(4)) {
                *t = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
    }
    for (i, bn) in net.bns.iter().enumerate() {
        if bn.running_var.iter().any(|&v| v < 0.0) {
            return Err(r.fail(format!("bn{:02}.running_var has negative entries", i + 1)));
        }
    }
    Ok(NetworkModel { net, norm })
}

/// Mutable flat views in manifest order (includes running statistics, unlike
/// the trainable-parameter ordering).
fn checkpoint_slices(net: &mut Network<f32>) -> Vec<&mut [f32]> {
    let depth = net.config.depth;
    let mut conv_iter = net.convs.iter_mut();
    let mut bn_iter = net.bns.iter_mut();
    let mut out: Vec<&mut [f32]> = Vec::new();
    for i in 0..depth {
        let conv = conv_iter.next().expect("depth matches convs");
        out.push(conv.w.as_slice_mut().expect("standard layout"));
        if let Some(b) = &mut conv.b {
            out.push(b.as_slice_mut().unwrap());
        }
        if i >= 1 && i < depth - 1 {
            let bn = bn_iter.next().expect("depth matches bns");
            out.push(bn.gamma.as_slice_mut().unwrap());
            out.push(bn.beta.as_slice_mut().unwrap());
            out.push(bn.running_mean.as_slice_mut().unwrap());
            out.push(bn.running_var.as_slice_mut().unwrap());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dncnn::testutil::randn;

    fn test_model(seed: u64) -> NetworkModel {
        let cfg = NetConfig {
            depth: 4,
            width: 4,
            ..Default::default()
        };
        let mut net32 = Network::<f32>::init(&cfg, seed).unwrap();
        // Make running stats non-trivial so the round trip covers them.
        let x = randn((2, 4, 6, 6), seed).mapv(|v| v as f32);
        net32.forward_train(&x).unwrap();
        NetworkModel {
            net: net32,
            norm: NormStats {
                x_min: [0.0, 0.1, 0.2, 0.3],
                x_max: [1.0, 2.0, 3.0, 4.0],
            },
        }
    }

    #[test]
    fn round_trip_reproduces_forward_outputs_bitwise() {
        let model = test_model(50);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.psm");
        write_model(&path, &model).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back.net, model.net);
        assert_eq!(back.norm, model.norm);
        let x = randn((1, 4, 8, 8), 51).mapv(|v| v as f32);
        let a = model.net.forward_infer(&x).unwrap();
        let b = back.net.forward_infer(&x).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        // Rewriting yields a byte-identical file.
        let path2 = dir.path().join("model2.psm");
        write_model(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn shape_audit_names_the_offending_tensor() {
        let model = test_model(52);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.psm");
        write_model(&path, &model).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // First tensor dims start after the fixed header (112 bytes), the
        // name length (4), the name "conv00.w" (8), and ndim (4).
        let dims_offset = 112 + 4 + 8 + 4;
        bytes[dims_offset..dims_offset + 4].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = read_model(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv00.w") && msg.contains("shape"), "{msg}");
    }

    #[test]
    fn truncation_names_the_tensor() {
        let model = test_model(53);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.psm");
        write_model(&path, &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        let err = read_model(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated") && msg.contains("conv03.b"), "{msg}");
    }

    #[test]
    fn negative_running_var_is_rejected() {
        let mut model = test_model(54);
        model.net.bns[0].running_var[1] = -0.5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.psm");
        write_model(&path, &model).unwrap();
        let err = read_model(&path).unwrap_err();
        assert!(err.to_string().contains("bn01.running_var"), "{err}");
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.psm");
        std::fs::write(&path, b"NOPE____________").unwrap();
        assert!(matches!(
            read_model(&path).unwrap_err(),
            Error::BadMagic { .. }
        ));
    }
}
