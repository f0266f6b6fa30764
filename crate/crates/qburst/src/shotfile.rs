//! QSHOT1 binary shot-record format.
//!
//! Little-endian layout:
//!
//! ```text
//! header:
//!   magic            6 bytes  "QSHOT1"
//!   version          u16
//!   n_qubits         u16
//!   n_shots          u64
//!   prep             u8       (0 = Zero, 1 = One, 2 = Ramsey)
//!   trigger_period   f64 us
//!   gun_pulse_width  f64 us
//!   prep_duration    f64 us
//!   readout_duration f64 us
//!   shots_per_run    u64
//!   n_delays         u8
//!   delays           n_delays x f64 us
//!   qubit table      n_qubits x { id_len u8, id bytes, orientation u8,
//!                                 t1 f64 us, t1_err f64 us }
//!   rng_seed         u64
//! record (4 bytes per shot):
//!   state_bits       u16      bit i = measured state of qubit i
//!   flags            u8       bit 0 = linac trigger assigned to this shot
//!   delay_slot       u8       index into the delay schedule
//! ```
//!
//! File size is exactly `header size + 4 * n_shots` bytes. No compression,
//! no endian auto-detection, at most 16 qubits.

use std::io::{Read, Write};

use crate::config::{JunctionOrientation, QubitConfig, TimingConfig};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 6] = *b"QSHOT1";
pub const VERSION: u16 = 1;
pub const RECORD_BYTES: u64 = 4;

/// State-preparation scheme of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prep {
    Zero,
    One,
    Ramsey,
}

impl Prep {
    pub fn tag(self) -> u8 {
        match self {
            Prep::Zero => 0,
            Prep::One => 1,
            Prep::Ramsey => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Prep::Zero),
            1 => Ok(Prep::One),
            2 => Ok(Prep::Ramsey),
            other => Err(Error::format(format!("unknown prep tag {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Prep::Zero => "prep0",
            Prep::One => "prep1",
            Prep::Ramsey => "ramsey",
        }
    }
}

/// One measurement shot across all qubits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShotRecord {
    pub shot_index: u64,
    /// Bit i = measured state of qubit i (1 = |1>). Bits above n_qubits are
    /// zero.
    pub state_bits: u16,
    pub trigger: bool,
    pub delay_slot: u8,
}

/// Run-level metadata preceding the record stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHeader {
    pub n_qubits: u16,
    pub n_shots: u64,
    pub prep: Prep,
    pub timing: TimingConfig,
    pub qubits: Vec<QubitConfig>,
    pub rng_seed: u64,
}

impl RunHeader {
    pub fn validate(&self) -> Result<()> {
        if self.n_qubits as usize != self.qubits.len() {
            return Err(Error::format(format!(
                "n_qubits {} != qubit table length {}",
                self.n_qubits,
                self.qubits.len()
            )));
        }
        if self.n_qubits == 0 || self.n_qubits > 16 {
            return Err(Error::format("n_qubits must be in 1..=16"));
        }
        Ok(())
    }

    /// Mask of valid state bits.
    pub fn state_mask(&self) -> u16 {
        if self.n_qubits == 16 {
            u16::MAX
        } else {
            (1u16 << self.n_qubits) - 1
        }
    }

    pub fn header_bytes(&self) -> u64 {
        let mut n = 6 + 2 + 2 + 8 + 1; // magic..prep
        n += 8 * 4 + 8 + 1; // timing scalars + shots_per_run + n_delays
        n += 8 * self.timing.detect_delays_us.len() as u64;
        for q in &self.qubits {
            n += 1 + q.id.len() as u64 + 1 + 8 + 8;
        }
        n + 8 // rng_seed
    }
}

fn encode_header(h: &RunHeader, out: &mut Vec<u8>) -> Result<()> {
    h.validate()?;
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&h.n_qubits.to_le_bytes());
    out.extend_from_slice(&h.n_shots.to_le_bytes());
    out.push(h.prep.tag());
    let t = &h.timing;
    out.extend_from_slice(&t.trigger_period_us.to_le_bytes());
    out.extend_from_slice(&t.gun_pulse_width_us.to_le_bytes());
    out.extend_from_slice(&t.prep_duration_us.to_le_bytes());
    out.extend_from_slice(&t.readout_duration_us.to_le_bytes());
    out.extend_from_slice(&t.shots_per_run.to_le_bytes());
    if t.detect_delays_us.len() > u8::MAX as usize {
        return Err(Error::format("too many detection delays"));
    }
    out.push(t.detect_delays_us.len() as u8);
    for d in &t.detect_delays_us {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for q in &h.qubits {
        if q.id.len() > u8::MAX as usize {
            return Err(Error::format(format!("qubit id `{}` too long", q.id)));
        }
        out.push(q.id.len() as u8);
        out.extend_from_slice(q.id.as_bytes());
        out.push(match q.orientation {
            JunctionOrientation::LowGapIsland => 0,
            JunctionOrientation::HighGapIsland => 1,
        });
        out.extend_from_slice(&q.t1_us.to_le_bytes());
        out.extend_from_slice(&q.t1_err_us.to_le_bytes());
    }
    out.extend_from_slice(&h.rng_seed.to_le_bytes());
    Ok(())
}

/// Tracks the byte offset so truncation errors can name it.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn read_exact(&mut self, buf: &mut [u8], context: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::Truncated {
                offset: self.offset,
                context: context.to_string(),
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn u8(&mut self, ctx: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b, ctx)?;
        Ok(b[0])
    }

    fn u16(&mut self, ctx: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b, ctx)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u64(&mut self, ctx: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, ctx)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self, ctx: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, ctx)?;
        Ok(f64::from_le_bytes(b))
    }
}

fn decode_header<R: Read>(cur: &mut Cursor<R>) -> Result<RunHeader> {
    let mut magic = [0u8; 6];
    cur.read_exact(&mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?} (expected \"QSHOT1\")",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let n_qubits = cur.u16("n_qubits")?;
    let n_shots = cur.u64("n_shots")?;
    let prep = Prep::from_tag(cur.u8("prep")?)?;
    let trigger_period_us = cur.f64("trigger_period")?;
    let gun_pulse_width_us = cur.f64("gun_pulse_width")?;
    let prep_duration_us = cur.f64("prep_duration")?;
    let readout_duration_us = cur.f64("readout_duration")?;
    let shots_per_run = cur.u64("shots_per_run")?;
    let n_delays = cur.u8("n_delays")? as usize;
    let mut detect_delays_us = Vec::with_capacity(n_delays);
    for _ in 0..n_delays {
        detect_delays_us.push(cur.f64("delay")?);
    }
    let mut qubits = Vec::with_capacity(n_qubits as usize);
    for _ in 0..n_qubits {
        let len = cur.u8("qubit id length")? as usize;
        let mut id = vec![0u8; len];
        cur.read_exact(&mut id, "qubit id")?;
        let id = String::from_utf8(id)
            .map_err(|_| Error::format("qubit id is not valid UTF-8"))?;
        let orientation = match cur.u8("orientation")? {
            0 => JunctionOrientation::LowGapIsland,
            1 => JunctionOrientation::HighGapIsland,
            other => {
                return Err(Error::format(format!("unknown orientation tag {other}")))
            }
        };
        let t1_us = cur.f64("t1")?;
        let t1_err_us = cur.f64("t1_err")?;
        qubits.push(QubitConfig {
            id,
            orientation,
            t1_us,
            t1_err_us,
        });
    }
    let rng_seed = cur.u64("rng_seed")?;
    let header = RunHeader {
        n_qubits,
        n_shots,
        prep,
        timing: TimingConfig {
            trigger_period_us,
            gun_pulse_width_us,
            prep_duration_us,
            readout_duration_us,
            detect_delays_us,
            shots_per_run,
        },
        qubits,
        rng_seed,
    };
    header.validate()?;
    Ok(header)
}

/// Write a run. Returns the byte count. Fails if the stream length does not
/// match `header.n_shots` or a record carries bits above `n_qubits`.
pub fn write_run<W, I>(header: &RunHeader, shots: I, sink: &mut W) -> Result<u64>
where
    W: Write,
    I: IntoIterator<Item = ShotRecord>,
{
    let mut buf = Vec::with_capacity(header.header_bytes() as usize);
    encode_header(header, &mut buf)?;
    let mask = header.state_mask();
    let mut written = 0u64;
    for shot in shots {
        if shot.state_bits & !mask != 0 {
            return Err(Error::format(format!(
                "shot {} carries state bits above n_qubits",
                shot.shot_index
            )));
        }
        buf.extend_from_slice(&shot.state_bits.to_le_bytes());
        buf.push(shot.trigger as u8);
        buf.push(shot.delay_slot);
        written += 1;
        if buf.len() >= 1 << 20 {
            sink.write_all(&buf)?;
            buf.clear();
        }
    }
    if written != header.n_shots {
        return Err(Error::format(format!(
            "header declares {} shots but stream produced {written}",
            header.n_shots
        )));
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(header.header_bytes() + RECORD_BYTES * written)
}

/// Streaming reader over the records of a run.
pub struct ShotReader<R> {
    cur: Cursor<R>,
    mask: u16,
    remaining: u64,
    next_index: u64,
}

impl<R: Read> Iterator for ShotReader<R> {
    type Item = Result<ShotRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let mut rec = [0u8; 4];
        if let Err(e) = self.cur.read_exact(&mut rec, "shot record") {
            self.remaining = 0;
            return Some(Err(e));
        }
        self.remaining -= 1;
        let state_bits = u16::from_le_bytes([rec[0], rec[1]]);
        if state_bits & !self.mask != 0 {
            self.remaining = 0;
            return Some(Err(Error::format(format!(
                "shot {} carries state bits above n_qubits",
                self.next_index
            ))));
        }
        let shot = ShotRecord {
            shot_index: self.next_index,
            state_bits,
            trigger: rec[2] & 1 != 0,
            delay_slot: rec[3],
        };
        self.next_index += 1;
        Some(Ok(shot))
    }
}

/// Read a run header and return a streaming record iterator.
pub fn read_run<R: Read>(source: R) -> Result<(RunHeader, ShotReader<R>)> {
    let mut cur = Cursor {
        inner: source,
        offset: 0,
    };
    let header = decode_header(&mut cur)?;
    let mask = header.state_mask();
    let remaining = header.n_shots;
    Ok((
        header,
        ShotReader {
            cur,
            mask,
            remaining,
            next_index: 0,
        },
    ))
}

/// A fully loaded run.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub header: RunHeader,
    pub shots: Vec<ShotRecord>,
}

impl Run {
    pub fn read_from<R: Read>(source: R) -> Result<Run> {
        let (header, reader) = read_run(source)?;
        let shots = reader.collect::<Result<Vec<_>>>()?;
        Ok(Run { header, shots })
    }

    pub fn read_path(path: &std::path::Path) -> Result<Run> {
        let file = std::fs::File::open(path)
            .map_err(|_| Error::MissingInput(path.to_path_buf()))?;
        Run::read_from(std::io::BufReader::new(file))
    }

    pub fn write_to<W: Write>(&self, sink: &mut W) -> Result<u64> {
        write_run(&self.header, self.shots.iter().copied(), sink)
    }

    pub fn write_path(&self, path: &std::path::Path) -> Result<u64> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n_shots: u64) -> RunHeader {
        RunHeader {
            n_qubits: 8,
            n_shots,
            prep: Prep::One,
            timing: TimingConfig::default(),
            qubits: crate::config::default_chip()
                .iter()
                .map(|q| q.qubit_config())
                .collect(),
            rng_seed: 7,
        }
    }

    #[test]
    fn empty_run_is_header_only() {
        let h = header(0);
        let mut buf = Vec::new();
        let n = write_run(&h, std::iter::empty(), &mut buf).unwrap();
        assert_eq!(n, h.header_bytes());
        assert_eq!(buf.len() as u64, h.header_bytes());
        let (back, mut reader) = read_run(&buf[..]).unwrap();
        assert_eq!(back, h);
        assert!(reader.next().is_none());
    }

    #[test]
    fn record_layout_is_documented_bytes() {
        let h = header(1);
        let shot = ShotRecord {
            shot_index: 0,
            state_bits: 0x00FF,
            trigger: true,
            delay_slot: 2,
        };
        let mut buf = Vec::new();
        write_run(&h, [shot], &mut buf).unwrap();
        let tail = &buf[buf.len() - 4..];
        assert_eq!(tail, [0xFF, 0x00, 0x01, 0x02]);
    }

    #[test]
    fn file_size_is_exact() {
        let n = 1000u64;
        let h = header(n);
        let shots = (0..n).map(|i| ShotRecord {
            shot_index: i,
            state_bits: (i % 251) as u16 & h.state_mask(),
            trigger: i % 97 == 0,
            delay_slot: (i % 7) as u8,
        });
        let mut buf = Vec::new();
        let written = write_run(&h, shots, &mut buf).unwrap();
        assert_eq!(written, h.header_bytes() + 4 * n);
        assert_eq!(buf.len() as u64, written);
    }

    #[test]
    fn shot_count_mismatch_is_format_error() {
        let h = header(3);
        let mut buf = Vec::new();
        let err = write_run(
            &h,
            [ShotRecord {
                shot_index: 0,
                state_bits: 0,
                trigger: false,
                delay_slot: 0,
            }],
            &mut buf,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn corrupted_magic_rejected() {
        let h = header(0);
        let mut buf = Vec::new();
        write_run(&h, std::iter::empty(), &mut buf).unwrap();
        buf[5] = b'9'; // "QSHOT9"
        match read_run(&buf[..]) {
            Err(err) => assert!(err.to_string().contains("magic"), "{err}"),
            Ok(_) => panic!("corrupted magic accepted"),
        }
    }

    #[test]
    fn truncation_names_offset() {
        let h = header(2);
        let shots = (0..2).map(|i| ShotRecord {
            shot_index: i,
            state_bits: 0,
            trigger: false,
            delay_slot: 0,
        });
        let mut buf = Vec::new();
        write_run(&h, shots, &mut buf).unwrap();
        buf.truncate(buf.len() - 2); // mid-record
        let (_, reader) = read_run(&buf[..]).unwrap();
        let err = reader.collect::<Result<Vec<_>>>().unwrap_err();
        match err {
            Error::Truncated { offset, .. } => {
                assert_eq!(offset, h.header_bytes() + 4);
            }
            other => panic!("expected truncation error, got {other}"),
        }
    }

    #[test]
    fn bits_above_n_qubits_rejected() {
        let h = header(1);
        let mut buf = Vec::new();
        let err = write_run(
            &h,
            [ShotRecord {
                shot_index: 0,
                state_bits: 0x0100, // bit 8 with n_qubits = 8
                trigger: false,
                delay_slot: 0,
            }],
            &mut buf,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
