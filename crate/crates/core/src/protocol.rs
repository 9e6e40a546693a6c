//! Little-endian request/response framing for out-of-process predictors and
//! policies.
//!
//! Every frame starts with a 10-byte header: 4-byte magic, `u16` version,
//! `u16` width, `u16` height. Payloads:
//!
//! * `MPRQ`: `width*height` `i8` cells in `{-1, 0, 1}`
//! * `MPRS`: `width*height` `f32` probabilities in `[0, 1]`
//! * `PLRQ`: two `width*height` `i8` grids in `{-1, 0, 1, 2}`, then the previous action as `u8`
//! * `PLRS`: `width = height = 1`, one action byte in `0..=5`

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use thiserror::Error;

pub const MAGIC_PREDICT_REQUEST: [u8; 4] = *b"MPRQ";
pub const MAGIC_PREDICT_RESPONSE: [u8; 4] = *b"MPRS";
pub const MAGIC_POLICY_REQUEST: [u8; 4] = *b"PLRQ";
pub const MAGIC_POLICY_RESPONSE: [u8; 4] = *b"PLRS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 10;
/// Upper bound on either frame dimension; larger headers are rejected
/// before any payload is allocated.
pub const MAX_DIM: u16 = 4096;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unexpected magic {found:?}, expected {expected:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported protocol version {0}")]
    BadVersion(u16),
    #[error("bad frame dimensions {width}x{height}: {reason}")]
    BadDimensions { width: u16, height: u16, reason: String },
    #[error("cell {index} has out-of-range value {value}")]
    BadCell { index: usize, value: i8 },
    #[error("probability {index} is {value}, outside [0, 1]")]
    BadProbability { index: usize, value: f32 },
    #[error("action {0} is out of range 0..=5")]
    BadAction(u8),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("peer closed the stream")]
    Closed,
    #[error("could not start {command}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
}

fn magic_str(m: &[u8; 4]) -> String {
    String::from_utf8_lossy(m).into_owned()
}

/// A frame split into header fields and raw payload bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawFrame {
    pub magic: [u8; 4],
    pub version: u16,
    pub width: u16,
    pub height: u16,
    pub payload: Vec<u8>,
}

impl RawFrame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    fn expect(&self, magic: [u8; 4]) -> Result<usize, ProtocolError> {
        if self.magic != magic {
            return Err(ProtocolError::BadMagic {
                expected: magic_str(&magic),
                found: magic_str(&self.magic),
            });
        }
        if self.version != VERSION {
            return Err(ProtocolError::BadVersion(self.version));
        }
        let cells = self.width as usize * self.height as usize;
        if payload_len(&magic, cells) != Some(self.payload.len()) {
            return Err(ProtocolError::BadDimensions {
                width: self.width,
                height: self.height,
                reason: format!("payload is {} bytes", self.payload.len()),
            });
        }
        Ok(cells)
    }
}

fn payload_len(magic: &[u8; 4], cells: usize) -> Option<usize> {
    match magic {
        b"MPRQ" => Some(cells),
        b"MPRS" => Some(cells * 4),
        b"PLRQ" => Some(cells * 2 + 1),
        b"PLRS" => Some(cells),
        _ => None,
    }
}

/// Read one frame. A clean end of stream before the first header byte is
/// reported as [`ProtocolError::Closed`].
pub fn read_frame<R: Read>(reader: &mut R) -> Result<RawFrame, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match reader.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(ProtocolError::Closed),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let magic = [header[0], header[1], header[2], header[3]];
    let version = u16::from_le_bytes([header[4], header[5]]);
    let width = u16::from_le_bytes([header[6], header[7]]);
    let height = u16::from_le_bytes([header[8], header[9]]);
    if version != VERSION {
        return Err(ProtocolError::BadVersion(version));
    }
    if width > MAX_DIM || height > MAX_DIM {
        return Err(ProtocolError::BadDimensions {
            width,
            height,
            reason: format!("exceeds {MAX_DIM}"),
        });
    }
    let len = payload_len(&magic, width as usize * height as usize).ok_or_else(|| ProtocolError::BadMagic {
        expected: "MPRQ|MPRS|PLRQ|PLRS".into(),
        found: magic_str(&magic),
    })?;
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload)?;
    Ok(RawFrame {
        magic,
        version,
        width,
        height,
        payload,
    })
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &RawFrame) -> Result<(), ProtocolError> {
    writer.write_all(&frame.encode())?;
    writer.flush()?;
    Ok(())
}

fn dims(width: usize, height: usize, lens: &[usize]) -> Result<(u16, u16), ProtocolError> {
    let too_big = |w: usize, h: usize| ProtocolError::BadDimensions {
        width: w.min(u16::MAX as usize) as u16,
        height: h.min(u16::MAX as usize) as u16,
        reason: format!("exceeds {MAX_DIM}"),
    };
    if width > MAX_DIM as usize || height > MAX_DIM as usize {
        return Err(too_big(width, height));
    }
    if let Some(&bad) = lens.iter().find(|&&n| n != width * height) {
        return Err(ProtocolError::BadDimensions {
            width: width as u16,
            height: height as u16,
            reason: format!("grid holds {bad} cells"),
        });
    }
    Ok((width as u16, height as u16))
}

fn check_cells(cells: &[i8], max: i8) -> Result<(), ProtocolError> {
    match cells.iter().position(|&v| !(-1..=max).contains(&v)) {
        Some(index) => Err(ProtocolError::BadCell {
            index,
            value: cells[index],
        }),
        None => Ok(()),
    }
}

fn as_bytes(cells: &[i8]) -> impl Iterator<Item = u8> + '_ {
    cells.iter().map(|&v| v as u8)
}

fn as_cells(bytes: &[u8]) -> Vec<i8> {
    bytes.iter().map(|&b| b as i8).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictRequest {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<i8>,
}

impl PredictRequest {
    pub fn to_frame(&self) -> Result<RawFrame, ProtocolError> {
        let (width, height) = dims(self.width, self.height, &[self.cells.len()])?;
        check_cells(&self.cells, 1)?;
        Ok(RawFrame {
            magic: MAGIC_PREDICT_REQUEST,
            version: VERSION,
            width,
            height,
            payload: as_bytes(&self.cells).collect(),
        })
    }

    pub fn from_frame(frame: &RawFrame) -> Result<Self, ProtocolError> {
        let n = frame.expect(MAGIC_PREDICT_REQUEST)?;
        let cells = as_cells(&frame.payload[..n]);
        check_cells(&cells, 1)?;
        Ok(Self {
            width: frame.width as usize,
            height: frame.height as usize,
            cells,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictResponse {
    pub width: usize,
    pub height: usize,
    pub probs: Vec<f32>,
}

fn check_probs(probs: &[f32]) -> Result<(), ProtocolError> {
    match probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        Some(index) => Err(ProtocolError::BadProbability {
            index,
            value: probs[index],
        }),
        None => Ok(()),
    }
}

impl PredictResponse {
    pub fn to_frame(&self) -> Result<RawFrame, ProtocolError> {
        let (width, height) = dims(self.width, self.height, &[self.probs.len()])?;
        check_probs(&self.probs)?;
        Ok(RawFrame {
            magic: MAGIC_PREDICT_RESPONSE,
            version: VERSION,
            width,
            height,
            payload: self.probs.iter().flat_map(|p| p.to_le_bytes()).collect(),
        })
    }

    pub fn from_frame(frame: &RawFrame) -> Result<Self, ProtocolError> {
        frame.expect(MAGIC_PREDICT_RESPONSE)?;
        let probs: Vec<f32> = frame
            .payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        check_probs(&probs)?;
        Ok(Self {
            width: frame.width as usize,
            height: frame.height as usize,
            probs,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyRequest {
    pub width: usize,
    pub height: usize,
    pub high: Vec<i8>,
    pub thres: Vec<i8>,
    pub prev_action: u8,
}

impl PolicyRequest {
    pub fn to_frame(&self) -> Result<RawFrame, ProtocolError> {
        let (width, height) = dims(self.width, self.height, &[self.high.len(), self.thres.len()])?;
        check_cells(&self.high, 2)?;
        check_cells(&self.thres, 2)?;
        if self.prev_action > 5 {
            return Err(ProtocolError::BadAction(self.prev_action));
        }
        let mut payload: Vec<u8> = as_bytes(&self.high).chain(as_bytes(&self.thres)).collect();
        payload.push(self.prev_action);
        Ok(RawFrame {
            magic: MAGIC_POLICY_REQUEST,
            version: VERSION,
            width,
            height,
            payload,
        })
    }

    pub fn from_frame(frame: &RawFrame) -> Result<Self, ProtocolError> {
        let n = frame.expect(MAGIC_POLICY_REQUEST)?;
        let high = as_cells(&frame.payload[..n]);
        let thres = as_cells(&frame.payload[n..2 * n]);
        check_cells(&high, 2)?;
        check_cells(&thres, 2)?;
        let prev_action = frame.payload[2 * n];
        if prev_action > 5 {
            return Err(ProtocolError::BadAction(prev_action));
        }
        Ok(Self {
            width: frame.width as usize,
            height: frame.height as usize,
            high,
            thres,
            prev_action,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyResponse {
    pub action: u8,
}

impl PolicyResponse {
    pub fn to_frame(&self) -> Result<RawFrame, ProtocolError> {
        if self.action > 5 {
            return Err(ProtocolError::BadAction(self.action));
        }
        Ok(self.to_frame_unchecked())
    }

    /// Encode without range checks, for test doubles that misbehave on purpose.
    pub fn to_frame_unchecked(&self) -> RawFrame {
        RawFrame {
            magic: MAGIC_POLICY_RESPONSE,
            version: VERSION,
            width: 1,
            height: 1,
            payload: vec![self.action],
        }
    }

    pub fn from_frame(frame: &RawFrame) -> Result<Self, ProtocolError> {
        frame.expect(MAGIC_POLICY_RESPONSE)?;
        if (frame.width, frame.height) != (1, 1) {
            return Err(ProtocolError::BadDimensions {
                width: frame.width,
                height: frame.height,
                reason: "policy responses are 1x1".into(),
            });
        }
        let action = frame.payload[0];
        if action > 5 {
            return Err(ProtocolError::BadAction(action));
        }
        Ok(Self { action })
    }
}

/// Where an external predictor or policy lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    /// Spawn this argv and talk over its stdin/stdout.
    Command(Vec<String>),
    /// Connect to `host:port`.
    Tcp(String),
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    /// `tcp:HOST:PORT` or `cmd:PROGRAM ARG...` (whitespace-separated).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let cmd = s.strip_prefix("cmd:").unwrap_or(s);
        let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err("empty endpoint".into());
        }
        Ok(Endpoint::Command(argv))
    }
}

/// A request/response connection with a per-response timeout. Frames are
/// read on a background thread so a silent peer cannot block the caller.
pub struct FrameChannel {
    writer: Box<dyn Write + Send>,
    responses: Receiver<Result<RawFrame, ProtocolError>>,
    child: Option<Child>,
    timeout: Duration,
}

impl FrameChannel {
    pub fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Self, ProtocolError> {
        match endpoint {
            Endpoint::Command(argv) => Self::spawn(argv, timeout),
            Endpoint::Tcp(addr) => Self::connect(addr, timeout),
        }
    }

    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self, ProtocolError> {
        let spawn_err = |source| ProtocolError::Spawn {
            command: argv.join(" "),
            source,
        };
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| spawn_err(io::Error::new(io::ErrorKind::InvalidInput, "empty command")))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(spawn_err)?;
        let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self::from_parts(Box::new(BufWriter::new(stdin)), stdout, Some(child), timeout))
    }

    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, ProtocolError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let read_half = stream.try_clone()?;
        Ok(Self::from_parts(Box::new(BufWriter::new(stream)), read_half, None, timeout))
    }

    fn from_parts<R: Read + Send + 'static>(
        writer: Box<dyn Write + Send>,
        reader: R,
        child: Option<Child>,
        timeout: Duration,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let frame = read_frame(&mut reader);
                let stop = frame.is_err();
                if tx.send(frame).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            writer,
            responses: rx,
            child,
            timeout,
        }
    }

    /// Send one frame and wait for the next one back.
    pub fn request(&mut self, frame: &RawFrame) -> Result<RawFrame, ProtocolError> {
        write_frame(&mut self.writer, frame)?;
        match self.responses.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(ProtocolError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ProtocolError::Closed),
        }
    }
}

impl Drop for FrameChannel {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Answer frames from `reader` until the peer closes the stream.
pub fn serve<R, W, F>(reader: R, writer: W, mut handler: F) -> Result<(), ProtocolError>
where
    R: Read,
    W: Write,
    F: FnMut(RawFrame) -> Result<RawFrame, ProtocolError>,
{
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(ProtocolError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        };
        let reply = handler(frame)?;
        write_frame(&mut writer, &reply)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn predict_request_layout() {
        let req = PredictRequest {
            width: 2,
            height: 1,
            cells: vec![-1, 1],
        };
        let bytes = req.to_frame().unwrap().encode();
        assert_eq!(bytes, vec![b'M', b'P', b'R', b'Q', 1, 0, 2, 0, 1, 0, 0xFF, 1]);
        let back = read_frame(&mut Cursor::new(bytes)).unwrap();
        assert_eq!(PredictRequest::from_frame(&back).unwrap(), req);
    }

    #[test]
    fn response_probabilities_are_little_endian() {
        let resp = PredictResponse {
            width: 1,
            height: 1,
            probs: vec![0.5],
        };
        let bytes = resp.to_frame().unwrap().encode();
        assert_eq!(&bytes[10..], &0.5f32.to_le_bytes());
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let frame = RawFrame {
            magic: MAGIC_PREDICT_RESPONSE,
            version: 1,
            width: 1,
            height: 1,
            payload: 1.5f32.to_le_bytes().to_vec(),
        };
        assert!(matches!(
            PredictResponse::from_frame(&frame),
            Err(ProtocolError::BadProbability { .. })
        ));
        let nan = RawFrame {
            payload: f32::NAN.to_le_bytes().to_vec(),
            ..frame
        };
        assert!(PredictResponse::from_frame(&nan).is_err());
    }

    #[test]
    fn bad_magic_and_version_are_errors() {
        let mut bytes = PolicyResponse { action: 3 }.to_frame().unwrap().encode();
        bytes[0] = b'X';
        assert!(matches!(read_frame(&mut Cursor::new(&bytes)), Err(ProtocolError::BadMagic { .. })));
        let mut bytes = PolicyResponse { action: 3 }.to_frame().unwrap().encode();
        bytes[4] = 2;
        assert!(matches!(read_frame(&mut Cursor::new(&bytes)), Err(ProtocolError::BadVersion(2))));
    }

    #[test]
    fn truncated_payload_is_an_io_error() {
        let bytes = PredictRequest {
            width: 3,
            height: 3,
            cells: vec![0; 9],
        }
        .to_frame()
        .unwrap()
        .encode();
        assert!(matches!(read_frame(&mut Cursor::new(&bytes[..15])), Err(ProtocolError::Io(_))));
        assert!(matches!(read_frame(&mut Cursor::new(&bytes[..0])), Err(ProtocolError::Closed)));
    }

    #[test]
    fn oversized_header_is_rejected_before_allocation() {
        let frame = RawFrame {
            magic: MAGIC_PREDICT_RESPONSE,
            version: 1,
            width: 60000,
            height: 60000,
            payload: vec![],
        };
        assert!(matches!(
            read_frame(&mut Cursor::new(frame.encode())),
            Err(ProtocolError::BadDimensions { .. })
        ));
    }

    #[test]
    fn action_nine_is_rejected() {
        let frame = PolicyResponse { action: 9 }.to_frame_unchecked();
        assert!(matches!(PolicyResponse::from_frame(&frame), Err(ProtocolError::BadAction(9))));
        assert!(PolicyResponse { action: 9 }.to_frame().is_err());
    }

    #[test]
    fn policy_request_round_trip() {
        let req = PolicyRequest {
            width: 3,
            height: 2,
            high: vec![-1, 0, 1, 2, 0, 0],
            thres: vec![1, 1, -1, 0, 2, -1],
            prev_action: 4,
        };
        let bytes = req.to_frame().unwrap().encode();
        assert_eq!(bytes.len(), 10 + 13);
        let back = PolicyRequest::from_frame(&read_frame(&mut Cursor::new(bytes)).unwrap()).unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn endpoint_parsing() {
        assert_eq!("tcp:127.0.0.1:9".parse::<Endpoint>().unwrap(), Endpoint::Tcp("127.0.0.1:9".into()));
        assert_eq!(
            "cmd:prog --x 1".parse::<Endpoint>().unwrap(),
            Endpoint::Command(vec!["prog".into(), "--x".into(), "1".into()])
        );
        assert!("".parse::<Endpoint>().is_err());
    }

    #[test]
    fn serve_answers_until_close() {
        let mut input = Vec::new();
        for a in 0..3u8 {
            input.extend(PolicyResponse { action: a }.to_frame().unwrap().encode());
        }
        let mut out = Vec::new();
        serve(Cursor::new(input), &mut out, Ok).unwrap();
        let mut cur = Cursor::new(out);
        for a in 0..3u8 {
            assert_eq!(PolicyResponse::from_frame(&read_frame(&mut cur).unwrap()).unwrap().action, a);
        }
    }
}
