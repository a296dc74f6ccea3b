//! CSLG: the binary container for per-frame log scores.
//!
//! Little-endian layout:
//!
//! ```text
//! "CSLG" | u16 version=1 | u16 flags (bit 0: normalized)
//! u32 T | u32 V | u32 frame rate in millihertz
//! u16 len + UTF-8 utterance id
//! V × (u16 len + UTF-8 symbol)
//! T·V f32, row-major
//! ```
//!
//! Logit and LID posterior files share the container; only the symbol list
//! differs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::augment::Vocabulary;
use crate::ctc::{log_sum_exp, LogitMatrix};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSLG";
pub const VERSION: u16 = 1;
pub const EXTENSION: &str = "cslg";
const FLAG_NORMALIZED: u16 = 1;

/// Row log-sum-exp tolerance for files flagged normalized. Values are stored
/// as f32, so the f64 check on [`LogitMatrix`] is too tight here.
pub const STORED_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CslgFile {
    pub matrix: LogitMatrix,
    pub symbols: Vec<String>,
}

impl CslgFile {
    pub fn new(matrix: LogitMatrix, symbols: Vec<String>) -> Result<Self> {
        if symbols.len() != matrix.symbols() {
            return Err(Error::Cslg(format!(
                "{} symbol names for V={}",
                symbols.len(),
                matrix.symbols()
            )));
        }
        Ok(CslgFile { matrix, symbols })
    }

    /// Fails unless the symbol list equals the vocabulary's, in order.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if self.symbols.as_slice() != vocab.symbols() {
            return Err(Error::Cslg(format!(
                "symbols of `{}` do not match the vocabulary (V={} vs {})",
                self.matrix.utterance_id,
                self.symbols.len(),
                vocab.len()
            )));
        }
        Ok(())
    }
}

/// `<dir>/<id>.cslg`
pub fn cslg_path(dir: impl AsRef<Path>, utterance_id: &str) -> PathBuf {
    dir.as_ref().join(format!("{utterance_id}.{EXTENSION}"))
}

fn put_str(out: &mut Vec<u8>, s: &str, what: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::Cslg(format!("{what} is longer than 65535 bytes")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode(file: &CslgFile) -> Result<Vec<u8>> {
    let m = &file.matrix;
    if file.symbols.len() != m.symbols() {
        return Err(Error::Cslg("symbol count differs from V".into()));
    }
    let dim = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::Cslg(format!("{what}={n} does not fit in u32")))
    };
    let millihz = (m.frame_rate * 1000.0).round();
    if !(millihz >= 1.0 && millihz <= u32::MAX as f64) {
        return Err(Error::Cslg(format!("frame rate {} is not representable", m.frame_rate)));
    }

    let mut out = Vec::with_capacity(32 + m.values().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if m.is_normalized() { FLAG_NORMALIZED } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&dim(m.frames(), "T")?.to_le_bytes());
    out.extend_from_slice(&dim(m.symbols(), "V")?.to_le_bytes());
    out.extend_from_slice(&(millihz as u32).to_le_bytes());
    put_str(&mut out, &m.utterance_id, "utterance id")?;
    for s in &file.symbols {
        put_str(&mut out, s, "symbol")?;
    }
    for &v in m.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Cslg(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Cslg(format!("{what} is not UTF-8")))
    }
}

/// Parses and validates a CSLG image.
///
/// Files flagged normalized must have every row's log-sum-exp within
/// [`STORED_TOLERANCE`]; their rows are then renormalized in f64.
pub fn decode(bytes: &[u8]) -> Result<CslgFile> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Cslg("bad magic, not a CSLG file".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Cslg(format!("unsupported version {version}")));
    }
    let flags = r.u16("flags")?;
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(Error::Cslg(format!("unknown flag bits {flags:#06x}")));
    }
    let frames = r.u32("T")? as usize;
    let symbols = r.u32("V")? as usize;
    let millihz = r.u32("frame rate")?;
    if frames < 1 || symbols < 2 {
        return Err(Error::Cslg(format!("need T >= 1 and V >= 2, got T={frames} V={symbols}")));
    }
    if millihz == 0 {
        return Err(Error::Cslg("frame rate is zero".into()));
    }
    let id = r.string("utterance id")?;
    let names = (0..symbols)
        .map(|i| r.string(&format!("symbol {i}")))
        .collect::<Result<Vec<_>>>()?;
    let n = frames
        .checked_mul(symbols)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Cslg("T×V overflows".into()))?;
    let raw = r.take(n * 4, "values")?;
    if r.pos != bytes.len() {
        return Err(Error::Cslg(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFiniteFrame { frame: i / symbols });
    }

    let normalized = flags & FLAG_NORMALIZED != 0;
    if normalized {
        for (t, row) in values.chunks_exact_mut(symbols).enumerate() {
            let lse = log_sum_exp(row);
            if !(lse.abs() <= STORED_TOLERANCE) {
                return Err(Error::Cslg(format!(
                    "frame {t} is flagged normalized but its log-sum-exp is {lse}"
                )));
            }
            row.iter_mut().for_each(|v| *v -= lse);
        }
    } else if values.iter().any(|v| !v.is_finite()) {
        let i = values.iter().position(|v| !v.is_finite()).unwrap();
        return Err(Error::NonFiniteFrame { frame: i / symbols });
    }
    let matrix = LogitMatrix::new(id, millihz as f64 / 1000.0, frames, symbols, values, normalized)?;
    CslgFile::new(matrix, names)
}

pub fn read(path: impl AsRef<Path>) -> Result<CslgFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Cslg(msg) => Error::Cslg(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes to a sibling temporary file and renames it into place, so readers
/// never see a partial file.
pub fn write(path: impl AsRef<Path>, file: &CslgFile) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(file)?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a file and checks it against a vocabulary, when one is given.
pub fn validate(path: impl AsRef<Path>, vocab: Option<&Vocabulary>) -> Result<CslgFile> {
    let file = read(path)?;
    if let Some(v) = vocab {
        file.check_vocab(v)?;
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(normalized: bool) -> CslgFile {
        let m = LogitMatrix::from_rows(
            "utt-1",
            50.0,
            &[vec![0.5, -1.0, 2.0], vec![-0.25, 0.0, 1.5]],
            false,
        )
        .unwrap();
        let m = if normalized { m.normalize().unwrap() } else { m };
        CslgFile::new(m, vec!["<blank>".into(), " ".into(), "a".into()]).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample(true)).unwrap();
        assert_eq!(&bytes[..4], b"CSLG");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..8], &[1, 0]);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 50_000);
        assert_eq!(&bytes[20..22], &[5, 0]);
        assert_eq!(&bytes[22..27], b"utt-1");
        let symbols = 2 + 7 + 2 + 1 + 2 + 1;
        assert_eq!(bytes.len(), 27 + symbols + 6 * 4);
    }

    #[test]
    fn round_trip_within_f32() {
        for normalized in [false, true] {
            let f = sample(normalized);
            let back = decode(&encode(&f).unwrap()).unwrap();
            assert_eq!(back.symbols, f.symbols);
            assert_eq!(back.matrix.utterance_id, "utt-1");
            assert_eq!(back.matrix.frame_rate, 50.0);
            assert_eq!(back.matrix.is_normalized(), normalized);
            for (a, b) in back.matrix.values().iter().zip(f.matrix.values()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let good = encode(&sample(true)).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(decode(&bad).is_err());
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad.push(0);
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn dishonest_normalized_flag() {
        let mut bytes = encode(&sample(false)).unwrap();
        bytes[6] = 1;
        assert!(matches!(decode(&bytes), Err(Error::Cslg(m)) if m.contains("log-sum-exp")));
    }

    #[test]
    fn nan_is_rejected() {
        let mut bytes = encode(&sample(false)).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::NonFiniteFrame { frame: 1 })));
    }

    #[test]
    fn atomic_write_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = cslg_path(dir.path(), "utt-1");
        write(&path, &sample(true)).unwrap();
        assert!(!dir.path().join("utt-1.cslg.tmp").exists());
        let vocab = Vocabulary::from_symbols(
            vec!["<blank>".into(), " ".into(), "a".into()],
            crate::augment::Scheme::Plain,
            None,
        )
        .unwrap();
        assert!(validate(&path, Some(&vocab)).is_ok());
        let other = Vocabulary::from_symbols(
            vec!["<blank>".into(), " ".into(), "b".into()],
            crate::augment::Scheme::Plain,
            None,
        )
        .unwrap();
        assert!(validate(&path, Some(&other)).is_err());
    }
}
