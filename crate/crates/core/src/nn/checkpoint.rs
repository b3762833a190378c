//! Flat parameter checkpoints.
//!
//! Layout:
//!
//! ```text
//! ppo-dice-checkpoint v1\n
//! tensors <count>\n
//! <rows>x<cols>\n          (one line per tensor)
//! data\n
//! <f64 little-endian, row-major, tensors in header order>
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &str = "ppo-dice-checkpoint v1";

pub fn save_tensors(path: &Path, tensors: &[Array2<f64>]) -> Result<()> {
    let mut header = format!("{MAGIC}\ntensors {}\n", tensors.len());
    for t in tensors {
        header.push_str(&format!("{}x{}\n", t.nrows(), t.ncols()));
    }
    header.push_str("data\n");
    let mut bytes = header.into_bytes();
    for t in tensors {
        for x in t.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_tensors(path: &Path) -> Result<Vec<Array2<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Input(format!("{}: {msg}", path.display()));

    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not utf-8"))?;
        pos += end + 1;
        if line == "data" {
            break;
        }
        lines.push(line.to_string());
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad("missing checkpoint magic"));
    }
    let count: usize = lines
        .get(1)
        .and_then(|l| l.strip_prefix("tensors "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| bad("missing tensor count"))?;
    if lines.len() != count + 2 {
        return Err(bad("tensor count does not match shape lines"));
    }

    let mut tensors = Vec::with_capacity(count);
    for shape in &lines[2..] {
        let (r, c) = shape.split_once('x').ok_or_else(|| bad("malformed shape"))?;
        let rows: usize = r.parse().map_err(|_| bad("malformed shape"))?;
        let cols: usize = c.parse().map_err(|_| bad("malformed shape"))?;
        let n = rows * cols;
        let payload = bytes
            .get(pos..pos + 8 * n)
            .ok_or_else(|| bad("truncated data"))?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        pos += 8 * n;
        tensors.push(Array2::from_shape_vec((rows, cols), data).expect("shape matches length"));
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after data"));
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_plain_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_tensors(&path, &[array![[1.0, 2.0]], array![[3.0], [4.0]]]).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"ppo-dice-checkpoint v1\ntensors 2\n1x2\n2x1\ndata\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 4 * 8);
        assert_eq!(&bytes[header.len()..header.len() + 8], &1.0f64.to_le_bytes());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_tensors(Path::new("/nonexistent/ckpt.bin")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt.bin"));
    }

    proptest! {
        #[test]
        fn roundtrip(shapes in prop::collection::vec((1usize..5, 1usize..5), 1..4), seed in any::<u64>()) {
            let tensors: Vec<Array2<f64>> = shapes
                .iter()
                .enumerate()
                .map(|(k, &(r, c))| {
                    Array2::from_shape_fn((r, c), |(i, j)| {
                        ((seed % 1000) as f64 + (k * 31 + i * 7 + j) as f64).sin() * 1e3
                    })
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("ckpt.bin");
            save_tensors(&path, &tensors).unwrap();
            prop_assert_eq!(load_tensors(&path).unwrap(), tensors);
        }
    }
}
