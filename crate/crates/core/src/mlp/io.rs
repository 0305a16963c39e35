use std::fs;
use std::path::Path;

use super::{InitKind, Layer, NetConfig, NetParams};
use crate::datasets::ByteReader;
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"MLPW";
const PARAMS_VERSION: u32 = 1;

fn init_tag(init: InitKind) -> (u8, f64) {
    match init {
        InitKind::Glorot => (0, 0.0),
        InitKind::He => (1, 0.0),
        InitKind::NtkScaled { beta } => (2, beta),
    }
}

pub fn encode_params(p: &NetParams) -> Vec<u8> {
    let cfg = &p.config;
    let mut out = Vec::with_capacity(40 + 8 * cfg.param_count());
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    for v in [cfg.d, cfg.depth, cfg.width, cfg.classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let (tag, beta) = init_tag(cfg.init);
    out.push(tag);
    out.extend_from_slice(&beta.to_le_bytes());
    for layer in &p.layers {
        for v in layer.weights.iter().chain(&layer.biases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<NetParams> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != PARAMS_MAGIC {
        return Err(Error::Header("not a network parameter file".into()));
    }
    let version = r.u32("version")?;
    if version != PARAMS_VERSION {
        return Err(Error::Header(format!("unsupported version {version}")));
    }
    let d = r.u32("d")? as usize;
    let depth = r.u32("depth")? as usize;
    let width = r.u32("width")? as usize;
    let classes = r.u32("K")? as usize;
    let tag = r.u8("init kind")?;
    let beta = r.f64("init beta")?;
    let init = match tag {
        0 => InitKind::Glorot,
        1 => InitKind::He,
        2 => InitKind::NtkScaled { beta },
        t => return Err(Error::Header(format!("unknown init kind {t}"))),
    };
    let cfg = NetConfig {
        d,
        depth,
        width,
        classes,
        init,
    };
    cfg.validate().map_err(|e| Error::Header(e.to_string()))?;
    r.ensure(8 * cfg.param_count(), "layer payload")?;
    let mut layers = Vec::with_capacity(depth + 1);
    for (fan_in, fan_out) in cfg.layer_shapes() {
        let mut layer = Layer::zeros(fan_in, fan_out);
        for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            *v = r.f64("weights")?;
        }
        layers.push(layer);
    }
    if r.remaining() != 0 {
        return Err(Error::Validation("trailing bytes after parameters".into()));
    }
    Ok(NetParams { config: cfg, layers })
}

pub fn write_params(p: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_params(p)).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: impl AsRef<Path>) -> Result<NetParams> {
    let path = path.as_ref();
    decode_params(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::init_params;

    #[test]
    fn roundtrip_all_inits() {
        for init in [InitKind::Glorot, InitKind::He, InitKind::NtkScaled { beta: 0.3 }] {
            for depth in [0, 1, 3] {
                let cfg = NetConfig::new(4, depth, 6, 3).with_init(init);
                let p = init_params(&cfg, 11).unwrap();
                assert_eq!(decode_params(&encode_params(&p)).unwrap(), p);
            }
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = init_params(&NetConfig::new(3, 1, 4, 2), 1).unwrap();
        let bytes = encode_params(&p);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_params(&bad), Err(Error::Header(_))));
        assert!(matches!(decode_params(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_params(&long), Err(Error::Validation(_))));
    }
}
