//! Checkpoint format: a little-endian u64 header length, a JSON header
//! describing the run, then every tensor's f64 data concatenated in
//! registration order, little-endian. Loading rebuilds the model from the
//! header and overwrites its tensors, so a checkpoint is self-contained.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterPartition;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::Model;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: Config,
    n_vars: usize,
    variable_names: Vec<String>,
    partition: ClusterPartition,
    tensors: Vec<TensorMeta>,
}

/// Serialize the model and the variable names it was trained against.
/// Identical models produce identical bytes.
pub fn save(path: &Path, model: &Model, variable_names: &[String]) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.cfg.clone(),
        n_vars: model.n_vars,
        variable_names: variable_names.to_vec(),
        partition: model.partition.clone(),
        tensors: (0..model.params.len())
            .map(|i| {
                let t = model.params.tensor(i);
                TensorMeta {
                    name: model.params.name(i).to_string(),
                    rows: t.rows(),
                    cols: t.cols(),
                }
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for i in 0..model.params.len() {
        for &v in model.params.tensor(i).as_slice() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

/// Load a checkpoint: returns the reconstructed model and the variable
/// names recorded at save time.
pub fn load(path: &Path) -> Result<(Model, Vec<String>)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|e| Error::Checkpoint(format!("header length: {e}")))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 64 * 1024 * 1024 {
        return Err(Error::Checkpoint(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|e| Error::Checkpoint(format!("header body: {e}")))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("header parse: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} not supported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }

    let mut model = Model::new(&header.config, header.n_vars, header.partition)?;
    if model.params.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "tensor count {} does not match the configuration's layout ({})",
            header.tensors.len(),
            model.params.len()
        )));
    }
    for (i, meta) in header.tensors.iter().enumerate() {
        let t = model.params.tensor(i);
        if meta.name != model.params.name(i) || (meta.rows, meta.cols) != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {i}: header says {} [{}x{}], layout expects {} [{}x{}]",
                meta.name,
                meta.rows,
                meta.cols,
                model.params.name(i),
                t.rows(),
                t.cols()
            )));
        }
    }

    for i in 0..model.params.len() {
        let slice = model.params.tensors_mut()[i].as_mut_slice();
        let mut buf = [0u8; 8];
        for v in slice.iter_mut() {
            file.read_exact(&mut buf)
                .map_err(|e| Error::Checkpoint(format!("payload truncated: {e}")))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut extra = [0u8; 1];
    if file.read(&mut extra)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok((model, header.variable_names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn small_model() -> Model {
        let cfg = gradcheck::small_config();
        Model::new(&cfg, 3, ClusterPartition::from_assignment(&[0, 0, 1])).unwrap()
    }

    fn names() -> Vec<String> {
        vec!["a".into(), "b".into(), "c".into()]
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = small_model();
        save(&path, &model, &names()).unwrap();
        let (loaded, vars) = load(&path).unwrap();
        assert_eq!(loaded.params, model.params);
        assert_eq!(loaded.partition, model.partition);
        assert_eq!(loaded.cfg, model.cfg);
        assert_eq!(vars, names());
    }

    #[test]
    fn identical_models_write_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save(&p1, &small_model(), &names()).unwrap();
        save(&p2, &small_model(), &names()).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &small_model(), &names()).unwrap();

        // Bump the version field in place.
        let bytes = std::fs::read(&path).unwrap();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[8..8 + header_len].to_vec()).unwrap();
        let tampered = header.replace("\"format_version\":1", "\"format_version\":2");
        assert_ne!(header, tampered);
        let mut out = (tampered.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(tampered.as_bytes());
        out.extend_from_slice(&bytes[8 + header_len..]);
        std::fs::write(&path, out).unwrap();

        match load(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &small_model(), &names()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        match load(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("truncated"), "{msg}"),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut out = 11u64.to_le_bytes().to_vec();
        out.extend_from_slice(b"not json!!!");
        std::fs::write(&path, out).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn loaded_model_imputes_identically() {
        use crate::data::TimeSeriesWindow;
        use crate::matrix::Matrix;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = small_model();
        save(&path, &model, &names()).unwrap();
        let (loaded, _) = load(&path).unwrap();

        let w = TimeSeriesWindow::new(
            Matrix::from_fn(3, 16, |v, t| ((t + v) as f64 * 0.3).sin()),
            Matrix::from_fn(3, 16, |v, t| if (v + t) % 5 == 0 { 0.0 } else { 1.0 }),
            names(),
        );
        let a = model.impute_window(&w).unwrap();
        let b = loaded.impute_window(&w).unwrap();
        assert_eq!(a.filled, b.filled);
    }
}
