//! Binary dataset container and CSV interchange.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! "SDOM"            4 bytes magic
//! version           u16
//! channels          u32
//! time_points       u32
//! trials            u32
//! classes           u32
//! sample_rate_hz    f64
//! per trial:
//!   label           u8
//!   provenance      u8   (0 clean, 1 outlier, 2 label noise, 0xFF unknown)
//!   signal          channels × time_points f64, row-major by channel
//! ```
//!
//! CSV has a header row `trial,channel,time,value,label` and one row per
//! (trial, channel, time) cell.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, Provenance, Trial};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"SDOM";
pub const FORMAT_VERSION: u16 = 1;
const UNKNOWN_PROVENANCE: u8 = 0xFF;
const HEADER_LEN: usize = 4 + 2 + 4 * 4 + 8;

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    dataset.validate()?;
    if dataset.num_classes > 256 {
        return Err(Error::Validation(
            "binary format stores labels in one byte (max 256 classes)".into(),
        ));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Validation(format!("{what} = {v} exceeds u32")))
    };
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&to_u32(dataset.channels(), "channels")?.to_le_bytes())?;
    out.write_all(&to_u32(dataset.time_points(), "time_points")?.to_le_bytes())?;
    out.write_all(&to_u32(dataset.len(), "trials")?.to_le_bytes())?;
    out.write_all(&to_u32(dataset.num_classes, "classes")?.to_le_bytes())?;
    out.write_all(&dataset.sample_rate_hz.to_le_bytes())?;

    let mut block = Vec::with_capacity(dataset.channels() * dataset.time_points() * 8);
    for (i, trial) in dataset.trials.iter().enumerate() {
        let prov = dataset
            .provenance_of(i)
            .map_or(UNKNOWN_PROVENANCE, Provenance::code);
        out.write_all(&[trial.label as u8, prov])?;
        block.clear();
        for v in trial.signal.as_slice() {
            block.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&block)?;
    }
    Ok(())
}

pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                reason: format!(
                    "unexpected end of data reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: "bad magic, expected \"SDOM\"".into(),
        });
    }
    let version = cur.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let channels = cur.u32("channels")?;
    let time_points = cur.u32("time_points")?;
    let n = cur.u32("trial count")?;
    let num_classes = cur.u32("class count")?;
    let sample_rate_hz = cur.f64("sample rate")?;
    debug_assert_eq!(cur.pos, HEADER_LEN);

    let per_trial = channels
        .checked_mul(time_points)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(2));
    match per_trial.and_then(|p| p.checked_mul(n)) {
        Some(body) if body == bytes.len() - HEADER_LEN => {}
        Some(body) if body > bytes.len() - HEADER_LEN => {
            // Fall through: the per-trial reads report the exact truncation offset.
        }
        Some(body) => {
            return Err(Error::Parse {
                offset: HEADER_LEN + body,
                reason: format!("{} trailing bytes", bytes.len() - HEADER_LEN - body),
            })
        }
        None => {
            return Err(Error::Parse {
                offset: HEADER_LEN,
                reason: "header dimensions overflow".into(),
            })
        }
    }

    let mut trials = Vec::with_capacity(n);
    let mut prov_codes = Vec::with_capacity(n);
    for i in 0..n {
        let label_at = cur.pos;
        let label = cur.u8("label")? as usize;
        if label >= num_classes {
            return Err(Error::Parse {
                offset: label_at,
                reason: format!("trial {i} label {label} out of range for {num_classes} classes"),
            });
        }
        let prov_at = cur.pos;
        let code = cur.u8("provenance")?;
        if code != UNKNOWN_PROVENANCE && Provenance::from_code(code).is_none() {
            return Err(Error::Parse {
                offset: prov_at,
                reason: format!("invalid provenance code {code}"),
            });
        }
        prov_codes.push((prov_at, code));
        let raw = cur.take(channels * time_points * 8, "signal block")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        trials.push(Trial::new(Matrix::new(channels, time_points, data)?, label));
    }

    let unknown = prov_codes
        .iter()
        .filter(|(_, c)| *c == UNKNOWN_PROVENANCE)
        .count();
    let provenance = if unknown == prov_codes.len() {
        None
    } else if unknown == 0 {
        Some(
            prov_codes
                .iter()
                .map(|&(_, c)| Provenance::from_code(c).unwrap())
                .collect(),
        )
    } else {
        let (offset, _) = prov_codes
            .iter()
            .find(|(_, c)| *c == UNKNOWN_PROVENANCE)
            .unwrap();
        return Err(Error::Parse {
            offset: *offset,
            reason: "provenance must be known for all trials or for none".into(),
        });
    };

    let dataset = Dataset {
        trials,
        num_classes,
        sample_rate_hz,
        provenance,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes the long-format CSV (`trial,channel,time,value,label`).
pub fn write_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    dataset.validate()?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["trial", "channel", "time", "value", "label"])
        .map_err(csv_err)?;
    for (i, trial) in dataset.trials.iter().enumerate() {
        for c in 0..trial.channels() {
            for t in 0..trial.time_points() {
                w.write_record([
                    i.to_string(),
                    c.to_string(),
                    t.to_string(),
                    trial.signal[(c, t)].to_string(),
                    trial.label.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the long-format CSV. Trials are ordered by their numeric id; every
/// (channel, time) cell must appear exactly once per trial. The class count is
/// one more than the largest label. Provenance is unknown for ingested data.
pub fn load_csv(path: impl AsRef<Path>, sample_rate_hz: f64) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            line: 0,
            reason: e.to_string(),
        })?;

    let headers = reader.headers().map_err(|e| Error::Csv {
        line: 1,
        reason: e.to_string(),
    })?;
    let expected = ["trial", "channel", "time", "value", "label"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Csv {
            line: 1,
            reason: format!("expected header {:?}", expected.join(",")),
        });
    }

    type Cells = BTreeMap<(usize, usize), f64>;
    let mut trials: BTreeMap<usize, (usize, Cells, u64)> = BTreeMap::new();
    let mut max_channel = 0;
    let mut max_time = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Csv {
                line,
                reason: format!("missing column `{name}`"),
            })
        };
        let parse_usize = |i: usize, name: &str| -> Result<usize> {
            field(i, name)?.parse().map_err(|_| Error::Csv {
                line,
                reason: format!("column `{name}` is not a non-negative integer"),
            })
        };
        let trial = parse_usize(0, "trial")?;
        let channel = parse_usize(1, "channel")?;
        let time = parse_usize(2, "time")?;
        let label = parse_usize(4, "label")?;
        let value: f64 = field(3, "value")?.parse().map_err(|_| Error::Csv {
            line,
            reason: "column `value` is not a number".into(),
        })?;
        if !value.is_finite() {
            return Err(Error::Csv {
                line,
                reason: "non-finite value".into(),
            });
        }
        max_channel = max_channel.max(channel);
        max_time = max_time.max(time);

        let entry = trials
            .entry(trial)
            .or_insert_with(|| (label, Cells::new(), line));
        if entry.0 != label {
            return Err(Error::Csv {
                line,
                reason: format!(
                    "trial {trial} has conflicting labels {} and {label}",
                    entry.0
                ),
            });
        }
        if entry.1.insert((channel, time), value).is_some() {
            return Err(Error::Csv {
                line,
                reason: format!("duplicate cell trial={trial} channel={channel} time={time}"),
            });
        }
    }
    if trials.is_empty() {
        return Err(Error::Csv {
            line: 1,
            reason: "no data rows".into(),
        });
    }

    let (channels, time_points) = (max_channel + 1, max_time + 1);
    let mut out = Vec::with_capacity(trials.len());
    let mut num_classes = 0;
    for (id, (label, cells, first_line)) in trials {
        if cells.len() != channels * time_points {
            return Err(Error::Csv {
                line: first_line,
                reason: format!(
                    "trial {id} has {} cells, expected {channels}x{time_points}",
                    cells.len()
                ),
            });
        }
        num_classes = num_classes.max(label + 1);
        // BTreeMap iterates (channel, time) in row-major order.
        let data = cells.into_values().collect();
        out.push(Trial::new(Matrix::new(channels, time_points, data)?, label));
    }
    let dataset = Dataset {
        trials: out,
        num_classes,
        sample_rate_hz,
        provenance: None,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::tiny_dataset;

    fn bytes_of(d: &Dataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(d, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_identity() {
        let d = tiny_dataset();
        assert_eq!(read_dataset(&bytes_of(&d)).unwrap(), d);

        let mut anon = d.clone();
        anon.provenance = None;
        assert_eq!(read_dataset(&bytes_of(&anon)).unwrap(), anon);
    }

    #[test]
    fn header_layout() {
        let buf = bytes_of(&tiny_dataset());
        assert_eq!(&buf[..4], b"SDOM");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(u32::from_le_bytes(buf[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[10..14].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(buf[14..18].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[18..22].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[22..30].try_into().unwrap()), 250.0);
        // label, provenance, then the first sample of trial 0.
        assert_eq!(&buf[30..32], &[0, 0]);
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), 0.0);
        assert_eq!(buf.len(), HEADER_LEN + 4 * (2 + 2 * 8 * 8));
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let buf = bytes_of(&tiny_dataset());
        for cut in [0, 3, 5, 20, 31, 100, buf.len() - 1] {
            match read_dataset(&buf[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn version_mismatch() {
        let mut buf = bytes_of(&tiny_dataset());
        buf[4] = 9;
        assert!(matches!(
            read_dataset(&buf),
            Err(Error::Version {
                found: 9,
                expected: 1
            })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut buf = bytes_of(&tiny_dataset());
        buf.push(0);
        assert!(matches!(read_dataset(&buf), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_dataset_rejected_at_save() {
        let mut d = tiny_dataset();
        d.trials.clear();
        d.provenance = Some(vec![]);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save(&d, dir.path().join("x.sdom")),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn csv_round_trip_and_line_numbers() {
        let d = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        fs::write(&path, &buf).unwrap();
        let back = load_csv(&path, 250.0).unwrap();
        let mut expected = d.clone();
        expected.provenance = None;
        assert_eq!(back, expected);

        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[5] = "0,1,x,0.5,0";
        fs::write(&path, lines.join("\n")).unwrap();
        match load_csv(&path, 250.0) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_missing_cell_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut text = String::from("trial,channel,time,value,label\n");
        for t in 0..4 {
            text += &format!("0,0,{t},1.0,0\n");
        }
        for t in 0..3 {
            text += &format!("1,0,{t},1.0,1\n");
        }
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_csv(&path, 100.0),
            Err(Error::Csv { line: 6, .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_values_round_trip_bit_exact(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 16)) {
            let mut d = tiny_dataset();
            d.trials[0].signal = Matrix::new(2, 8, values).unwrap();
            let back = read_dataset(&bytes_of(&d)).unwrap();
            for (a, b) in back.trials[0].signal.as_slice().iter().zip(d.trials[0].signal.as_slice()) {
                proptest::prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
