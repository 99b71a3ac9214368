//! Model weights file: a JSON manifest describing the architecture
//! followed by the flat parameter vector as little-endian f64. The
//! round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{
    InflectionNet, PathHeadKind, PathLossKind, PathNet, ToyModel, TrainConfig,
};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SSYNCW01";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    grid: usize,
    channels: usize,
    hidden: usize,
    output_len: usize,
    dilations: Option<(usize, usize, usize)>,
    head: Option<PathHeadKind>,
    loss: Option<PathLossKind>,
    param_count: usize,
    config: Option<TrainConfig>,
    version: String,
}

pub fn save_model(model: &ToyModel, config: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let params = model.params_flat();
    let manifest = match model {
        ToyModel::Inflection(net) => Manifest {
            kind: "inflection".into(),
            grid: net.grid,
            channels: net.conv1.out_ch(),
            hidden: net.dense1.out_dim(),
            output_len: net.dense2.out_dim(),
            dilations: Some(net.dilations),
            head: None,
            loss: None,
            param_count: params.len(),
            config: config.cloned(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        ToyModel::Path(net) => Manifest {
            kind: "path".into(),
            grid: net.grid,
            channels: net.conv2.out_ch(),
            hidden: net.dense1.out_dim(),
            output_len: net.dense2.out_dim(),
            dilations: None,
            head: Some(net.head_kind()),
            loss: Some(net.loss),
            param_count: params.len(),
            config: config.cloned(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
    };
    let manifest_bytes = serde_json::to_vec(&manifest).map_err(|e| Error::MalformedWeights {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&manifest_bytes).map_err(io_err)?;
    for v in &params {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ToyModel, Option<TrainConfig>)> {
    let path = path.as_ref();
    let malformed = |detail: &str| Error::MalformedWeights {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };

    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(malformed("missing weights magic"));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if 16 + manifest_len > bytes.len() {
        return Err(malformed("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + manifest_len])
        .map_err(|e| malformed(&format!("bad manifest json: {e}")))?;

    let body = &bytes[16 + manifest_len..];
    if body.len() != manifest.param_count * 8 {
        return Err(malformed(&format!(
            "expected {} parameter bytes, found {}",
            manifest.param_count * 8,
            body.len()
        )));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    // Architecture is rebuilt from the manifest; the stored parameters
    // then overwrite the placeholder initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = match manifest.kind.as_str() {
        "inflection" => {
            let dilations = manifest
                .dilations
                .ok_or_else(|| malformed("inflection manifest lacks dilations"))?;
            let mut net = InflectionNet::new(
                manifest.grid,
                manifest.channels,
                dilations,
                manifest.hidden,
                manifest.output_len,
                &mut rng,
            )?;
            net.set_params_flat(&params)?;
            ToyModel::Inflection(net)
        }
        "path" => {
            let head = manifest
                .head
                .ok_or_else(|| malformed("path manifest lacks head kind"))?;
            let loss = manifest
                .loss
                .ok_or_else(|| malformed("path manifest lacks loss kind"))?;
            let mut net = PathNet::new(
                manifest.grid,
                manifest.channels,
                manifest.hidden,
                manifest.output_len,
                head,
                loss,
                &mut rng,
            )?;
            net.set_params_flat(&params)?;
            ToyModel::Path(net)
        }
        other => return Err(malformed(&format!("unknown model kind `{other}`"))),
    };
    Ok((model, manifest.config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = InflectionNet::new(26, 4, (1, 2, 3), 8, 6, &mut rng).unwrap();
        let model = ToyModel::Inflection(net);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        let config = TrainConfig::inflection_default(12);
        save_model(&model, Some(&config), tmp.path()).unwrap();
        let (loaded, loaded_config) = load_model(tmp.path()).unwrap();
        let (a, b) = (model.params_flat(), loaded.params_flat());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(loaded_config.unwrap().seed, 12);
    }

    #[test]
    fn path_model_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = PathNet::new(
            40,
            8,
            8,
            6,
            PathHeadKind::Sasa,
            PathLossKind::Divergence { lambda: 0.1 },
            &mut rng,
        )
        .unwrap();
        let model = ToyModel::Path(net);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_model(&model, None, tmp.path()).unwrap();
        let (loaded, _) = load_model(tmp.path()).unwrap();
        assert_eq!(model.params_flat(), loaded.params_flat());
        match loaded {
            ToyModel::Path(net) => {
                assert_eq!(net.head_kind(), PathHeadKind::Sasa);
            }
            _ => panic!("expected path model"),
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), b"not a weights file").unwrap();
        assert!(matches!(
            load_model(tmp.path()),
            Err(Error::MalformedWeights { .. })
        ));
    }
}
