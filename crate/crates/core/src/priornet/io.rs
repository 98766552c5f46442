//! Binary parameter files.
//!
//! A short text header (`key value` lines, then one `name rows cols` line
//! per tensor, then a `data` line) followed by little-endian `f64` values
//! in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NetConfig, PriorKind, PriorNetParams};
use crate::diffcalc::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "fewtopic-priornet 1";

pub fn write_params(params: &PriorNetParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let c = params.config();
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    for (key, value) in [
        ("terms", c.n_terms.to_string()),
        ("topics", c.n_topics.to_string()),
        ("repr_dim", c.repr_dim.to_string()),
        ("hidden", c.hidden.to_string()),
        ("kind", c.kind.as_str().to_string()),
        ("use_representation", c.use_representation.to_string()),
        ("log_features", c.log_features.to_string()),
        ("dropout", format!("{:?}", c.dropout)),
        ("seed", params.seed().to_string()),
        ("tensors", params.tensors().len().to_string()),
    ] {
        header.push_str(&format!("{key} {value}\n"));
    }
    for ((name, _), t) in c.layout().iter().zip(params.tensors()) {
        header.push_str(&format!("{name} {} {}\n", t.nrows(), t.ncols()));
    }
    header.push_str("data\n");
    let io = |e| Error::io(path, e);
    w.write_all(header.as_bytes()).map_err(io)?;
    for t in params.tensors() {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_params(path: &Path) -> Result<PriorNetParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line_no = 0;
    let mut next_line = |r: &mut BufReader<File>| -> Result<(usize, String)> {
        let mut s = String::new();
        let n = r.read_line(&mut s).map_err(|e| Error::io(path, e))?;
        line_no += 1;
        if n == 0 {
            return Err(Error::parse(path, line_no, "unexpected end of header"));
        }
        Ok((line_no, s.trim_end().to_string()))
    };

    let (ln, magic) = next_line(&mut r)?;
    if magic != MAGIC {
        return Err(Error::parse(path, ln, format!("expected '{MAGIC}'")));
    }
    let mut field = |r: &mut BufReader<File>, key: &str| -> Result<(usize, String)> {
        let (ln, s) = next_line(r)?;
        match s.split_once(' ') {
            Some((k, v)) if k == key => Ok((ln, v.to_string())),
            _ => Err(Error::parse(path, ln, format!("expected field '{key}'"))),
        }
    };
    fn num<T: std::str::FromStr>(path: &Path, (ln, v): (usize, String)) -> Result<T> {
        v.parse()
            .map_err(|_| Error::parse(path, ln, format!("invalid value '{v}'")))
    }
    let n_terms = num(path, field(&mut r, "terms")?)?;
    let n_topics = num(path, field(&mut r, "topics")?)?;
    let repr_dim = num(path, field(&mut r, "repr_dim")?)?;
    let hidden = num(path, field(&mut r, "hidden")?)?;
    let (ln, kind) = field(&mut r, "kind")?;
    let kind = PriorKind::parse(&kind).map_err(|e| Error::parse(path, ln, e.to_string()))?;
    let use_representation = num(path, field(&mut r, "use_representation")?)?;
    let log_features = num(path, field(&mut r, "log_features")?)?;
    let dropout = num(path, field(&mut r, "dropout")?)?;
    let seed = num(path, field(&mut r, "seed")?)?;
    let tensors_field = field(&mut r, "tensors")?;
    let tensors_line = tensors_field.0;
    let n_tensors: usize = num(path, tensors_field)?;
    let config = NetConfig {
        n_terms,
        n_topics,
        repr_dim,
        hidden,
        kind,
        use_representation,
        log_features,
        dropout,
    };
    let layout = config.layout();
    if layout.len() != n_tensors {
        return Err(Error::parse(
            path,
            tensors_line,
            format!(
                "configuration implies {} tensors, header lists {n_tensors}",
                layout.len()
            ),
        ));
    }
    for (name, (rows, cols)) in &layout {
        let (ln, s) = next_line(&mut r)?;
        let expected = format!("{name} {rows} {cols}");
        if s != expected {
            return Err(Error::parse(path, ln, format!("expected '{expected}', found '{s}'")));
        }
    }
    let (ln, s) = next_line(&mut r)?;
    if s != "data" {
        return Err(Error::parse(path, ln, "expected 'data'"));
    }

    let mut tensors = Vec::with_capacity(layout.len());
    let mut buf = [0u8; 8];
    for (name, shape) in &layout {
        let mut values = Vec::with_capacity(shape.0 * shape.1);
        for _ in 0..shape.0 * shape.1 {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Data(format!("{}: truncated data in tensor {name}", path.display())))?;
            values.push(f64::from_le_bytes(buf));
        }
        tensors.push(Tensor::from_shape_vec(*shape, values).expect("length matches shape"));
    }
    if r.read(&mut buf).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Data(format!("{}: trailing bytes after data", path.display())));
    }
    PriorNetParams::from_parts(config, seed, tensors)
}
