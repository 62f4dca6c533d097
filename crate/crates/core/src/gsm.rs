//! Text-mode SMS over AT commands.
//!
//! Client side of one send, byte for byte:
//!
//! ```text
//! -> AT+CMGF=1\r                 <- \r\nOK\r\n
//! -> AT+CMGS="<recipient>"\r     <- \r\n>␠
//! -> <body>\x1A                  <- \r\n+CMGS: <ref>\r\n\r\nOK\r\n
//! ```
//!
//! Any unmet expectation aborts the attempt. The client then drains the line
//! for the backoff period and starts over, up to `max_retries` extra attempts.
//! [`ModemSim`] implements the other end, with scripted faults.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{Notification, MAX_SMS_BODY};
use crate::telemetry::PhoneNumber;

const CTRL_Z: u8 = 0x1A;
const ESC: u8 = 0x1B;

/// Bytes buffered while waiting on one expectation before the link is
/// considered babbling.
const MAX_PENDING: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("transport closed")]
    Closed,
    #[error("transport i/o: {0}")]
    Io(String),
}

/// Ordered byte link to a modem.
pub trait SerialTransport {
    fn write(&mut self, bytes: &[u8]) -> Result<(), TransportError>;

    /// Reads whatever arrives within `timeout_ms`. `Ok(0)` means the
    /// deadline passed with nothing received.
    fn read(&mut self, buf: &mut [u8], timeout_ms: u64) -> Result<usize, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub response_deadline_ms: u64,
    pub backoff_ms: u64,
    pub max_retries: u32,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            response_deadline_ms: 5_000,
            backoff_ms: 2_000,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SendError {
    #[error("invalid recipient: {0}")]
    Recipient(String),
    #[error("invalid body: {0}")]
    Body(String),
}

/// Why an attempt was abandoned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptFailure {
    Timeout { awaiting: &'static str },
    ModemError(String),
    Transport(TransportError),
}

impl fmt::Display for AttemptFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttemptFailure::Timeout { awaiting } => write!(f, "timeout awaiting {awaiting}"),
            AttemptFailure::ModemError(line) => write!(f, "modem error {line:?}"),
            AttemptFailure::Transport(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Tx,
    Rx,
}

/// Every byte that crossed the link, in order. Consecutive chunks in the
/// same direction are coalesced, so the transcript does not depend on how
/// the transport fragmented its reads.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<(Direction, Vec<u8>)>,
}

impl Transcript {
    pub fn push(&mut self, dir: Direction, bytes: &[u8]) {
        if bytes.is_empty() {
            return;
        }
        match self.entries.last_mut() {
            Some((d, buf)) if *d == dir => buf.extend_from_slice(bytes),
            _ => self.entries.push((dir, bytes.to_vec())),
        }
    }

    pub fn entries(&self) -> &[(Direction, Vec<u8>)] {
        &self.entries
    }

    /// All transmitted bytes, concatenated.
    pub fn sent(&self) -> Vec<u8> {
        self.bytes(Direction::Tx)
    }

    /// All received bytes, concatenated.
    pub fn received(&self) -> Vec<u8> {
        self.bytes(Direction::Rx)
    }

    fn bytes(&self, dir: Direction) -> Vec<u8> {
        self.entries
            .iter()
            .filter(|(d, _)| *d == dir)
            .flat_map(|(_, b)| b.iter().copied())
            .collect()
    }

    /// One line per entry: `TX "<escaped>"` or `RX "<escaped>"`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (dir, bytes) in &self.entries {
            let tag = match dir {
                Direction::Tx => "TX",
                Direction::Rx => "RX",
            };
            out.push_str(&format!("{tag} \"{}\"\n", bytes.escape_ascii()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryReport {
    pub recipient: PhoneNumber,
    pub success: bool,
    pub attempts: u32,
    pub failures: Vec<AttemptFailure>,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    SetTextMode,
    AwaitPrompt,
    SendingBody,
    AwaitSendResult,
}

/// Where the client is in the dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueState {
    pub phase: Phase,
    pub attempt: u32,
    pub last_error: Option<String>,
}

enum Expect {
    Ok,
    Prompt,
    SendResult,
}

impl Expect {
    fn label(&self) -> &'static str {
        match self {
            Expect::Ok => "OK",
            Expect::Prompt => "prompt",
            Expect::SendResult => "+CMGS result",
        }
    }
}

/// Runs AT dialogues over one transport, one at a time.
pub struct SmsClient<'a, T: SerialTransport + ?Sized> {
    transport: &'a mut T,
    cfg: LinkConfig,
    state: DialogueState,
    pending: Vec<u8>,
    transcript: Transcript,
}

impl<'a, T: SerialTransport + ?Sized> SmsClient<'a, T> {
    pub fn new(transport: &'a mut T, cfg: LinkConfig) -> Self {
        SmsClient {
            transport,
            cfg,
            state: DialogueState {
                phase: Phase::Idle,
                attempt: 0,
                last_error: None,
            },
            pending: Vec::new(),
            transcript: Transcript::default(),
        }
    }

    pub fn state(&self) -> &DialogueState {
        &self.state
    }

    pub fn send(&mut self, recipient: &PhoneNumber, body: &str) -> Result<DeliveryReport, SendError> {
        check_body(body)?;
        let recipient = PhoneNumber::parse(recipient.as_str()).map_err(|e| SendError::Recipient(e.to_string()))?;

        self.transcript = Transcript::default();
        self.pending.clear();
        let mut failures = Vec::new();
        let mut success = false;
        let max_attempts = self.cfg.max_retries + 1;
        for attempt in 1..=max_attempts {
            self.state.attempt = attempt;
            if attempt > 1 {
                self.drain(self.cfg.backoff_ms);
            }
            match self.attempt(&recipient, body) {
                Ok(()) => {
                    success = true;
                    self.state.last_error = None;
                    break;
                }
                Err(f) => {
                    self.state.last_error = Some(f.to_string());
                    let fatal = matches!(f, AttemptFailure::Transport(TransportError::Closed));
                    failures.push(f);
                    if fatal {
                        break;
                    }
                }
            }
        }
        self.state.phase = Phase::Idle;
        Ok(DeliveryReport {
            recipient,
            success,
            attempts: self.state.attempt,
            failures,
            transcript: std::mem::take(&mut self.transcript),
        })
    }

    fn attempt(&mut self, recipient: &PhoneNumber, body: &str) -> Result<(), AttemptFailure> {
        self.pending.clear();
        self.state.phase = Phase::SetTextMode;
        self.write(b"AT+CMGF=1\r")?;
        self.expect(Expect::Ok)?;

        self.state.phase = Phase::AwaitPrompt;
        self.write(format!("AT+CMGS=\"{recipient}\"\r").as_bytes())?;
        self.expect(Expect::Prompt)?;

        self.state.phase = Phase::SendingBody;
        let mut payload = body.as_bytes().to_vec();
        payload.push(CTRL_Z);
        self.write(&payload)?;

        self.state.phase = Phase::AwaitSendResult;
        self.expect(Expect::SendResult)
    }

    fn write(&mut self, bytes: &[u8]) -> Result<(), AttemptFailure> {
        self.transcript.push(Direction::Tx, bytes);
        self.transport.write(bytes).map_err(AttemptFailure::Transport)
    }

    fn read_some(&mut self, timeout_ms: u64) -> Result<usize, TransportError> {
        let mut buf = [0u8; 64];
        let n = self.transport.read(&mut buf, timeout_ms)?;
        self.transcript.push(Direction::Rx, &buf[..n]);
        self.pending.extend_from_slice(&buf[..n]);
        Ok(n)
    }

    /// Discards whatever the modem says during the backoff period.
    fn drain(&mut self, ms: u64) {
        while let Ok(n) = self.read_some(ms) {
            if n == 0 {
                break;
            }
        }
        self.pending.clear();
    }

    fn expect(&mut self, what: Expect) -> Result<(), AttemptFailure> {
        let mut saw_cmgs = false;
        loop {
            while let Some(line) = take_line(&mut self.pending) {
                let line = line.trim_ascii();
                if line.is_empty() {
                    continue;
                }
                if line == b"ERROR" || line.starts_with(b"+CMS ERROR") || line.starts_with(b"+CME ERROR") {
                    return Err(AttemptFailure::ModemError(String::from_utf8_lossy(line).into_owned()));
                }
                match what {
                    Expect::Ok if line == b"OK" => return Ok(()),
                    Expect::SendResult if line.starts_with(b"+CMGS:") => saw_cmgs = true,
                    Expect::SendResult if line == b"OK" => {
                        return if saw_cmgs {
                            Ok(())
                        } else {
                            Err(AttemptFailure::ModemError("OK without +CMGS".into()))
                        };
                    }
                    // echoes, URCs and noise
                    _ => {}
                }
            }
            if matches!(what, Expect::Prompt) && self.pending.trim_ascii_start().starts_with(b"> ") {
                self.pending.clear();
                return Ok(());
            }
            if self.pending.len() > MAX_PENDING {
                return Err(AttemptFailure::ModemError("unterminated response".into()));
            }
            match self.read_some(self.cfg.response_deadline_ms) {
                Ok(0) => return Err(AttemptFailure::Timeout { awaiting: what.label() }),
                Ok(_) => {}
                Err(e) => return Err(AttemptFailure::Transport(e)),
            }
        }
    }
}

fn take_line(pending: &mut Vec<u8>) -> Option<Vec<u8>> {
    let pos = pending.iter().position(|&b| b == b'\n')?;
    let mut line: Vec<u8> = pending.drain(..=pos).collect();
    line.pop();
    Some(line)
}

fn check_body(body: &str) -> Result<(), SendError> {
    if body.len() > MAX_SMS_BODY {
        return Err(SendError::Body(format!("{} bytes exceeds {MAX_SMS_BODY}", body.len())));
    }
    if let Some(b) = body.bytes().find(|&b| !(0x20..0x7f).contains(&b)) {
        return Err(SendError::Body(format!(
            "byte {b:#04x} not allowed in a text-mode body"
        )));
    }
    Ok(())
}

/// Sends one SMS with a fresh client.
pub fn send_sms<T: SerialTransport + ?Sized>(
    transport: &mut T,
    recipient: &PhoneNumber,
    body: &str,
    cfg: LinkConfig,
) -> Result<DeliveryReport, SendError> {
    SmsClient::new(transport, cfg).send(recipient, body)
}

/// Sends a notification to the hospital, then the police, on one transport.
/// A failed send never skips the other recipient.
pub fn notify_all<T: SerialTransport + ?Sized>(
    transport: &mut T,
    notification: &Notification,
    cfg: LinkConfig,
) -> Result<Vec<DeliveryReport>, SendError> {
    let mut client = SmsClient::new(transport, cfg);
    notification
        .recipients()
        .into_iter()
        .map(|r| client.send(&r.phone, &notification.body))
        .collect()
}

/// True when the transcript ends with a complete healthy exchange for
/// `recipient` and `body`.
pub fn transcript_succeeded(transcript: &Transcript, recipient: &PhoneNumber, body: &str) -> bool {
    let e = transcript.entries();
    if e.len() < 6 {
        return false;
    }
    let tail = &e[e.len() - 6..];
    let mut body_tx = body.as_bytes().to_vec();
    body_tx.push(CTRL_Z);
    // an unanswered earlier attempt coalesces into the first TX entry
    let tx_ok = tail[0].0 == Direction::Tx
        && tail[0].1.ends_with(b"AT+CMGF=1\r")
        && tail[2] == (Direction::Tx, format!("AT+CMGS=\"{recipient}\"\r").into_bytes())
        && tail[4] == (Direction::Tx, body_tx);
    let rx = |i: usize| -> Option<&[u8]> {
        match &tail[i] {
            (Direction::Rx, b) => Some(b.as_slice()),
            _ => None,
        }
    };
    let lines = |b: &[u8]| -> Vec<Vec<u8>> {
        b.split(|&c| c == b'\n')
            .map(|l| l.trim_ascii().to_vec())
            .filter(|l| !l.is_empty())
            .collect()
    };
    let (Some(r1), Some(r2), Some(r3)) = (rx(1), rx(3), rx(5)) else {
        return false;
    };
    let r3_lines = lines(r3);
    tx_ok
        && lines(r1).last().is_some_and(|l| l == b"OK")
        && r2.trim_ascii_start().starts_with(b"> ")
        && r3_lines.len() >= 2
        && r3_lines[r3_lines.len() - 2].starts_with(b"+CMGS:")
        && r3_lines[r3_lines.len() - 1] == b"OK"
}

// ---------------------------------------------------------------------------
// Modem simulator

/// What a scripted fault does to the command it matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultAction {
    /// `ERROR`, or `+CMS ERROR: 500` for SMS commands.
    Error,
    /// Swallow the command and say nothing.
    Drop,
    /// Reply with a line of noise instead of the real answer.
    Garbage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultTarget {
    Index(u64),
    Every,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultRule {
    pub target: FaultTarget,
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("fault script line {line}: {msg}")]
pub struct FaultScriptError {
    pub line: usize,
    pub msg: String,
}

/// Faults keyed by zero-based command index, counted over every command the
/// modem receives (each `\r`-terminated line and each Ctrl-Z body).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultScript {
    by_index: BTreeMap<u64, FaultAction>,
    every: Option<FaultAction>,
}

impl FaultScript {
    pub fn new(rules: impl IntoIterator<Item = FaultRule>) -> Self {
        let mut s = FaultScript::default();
        for r in rules {
            match r.target {
                FaultTarget::Index(i) => {
                    s.by_index.insert(i, r.action);
                }
                FaultTarget::Every => s.every = Some(r.action),
            }
        }
        s
    }

    /// Fails the first `n` commands with `ERROR`.
    pub fn fail_first(n: u64) -> Self {
        FaultScript::new((0..n).map(|i| FaultRule {
            target: FaultTarget::Index(i),
            action: FaultAction::Error,
        }))
    }

    /// Parses `cmd_index:<n|*> action:<error|drop|garbage>` rules, one per
    /// line, `#` comments allowed.
    pub fn parse(text: &str) -> Result<Self, FaultScriptError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| FaultScriptError { line: i + 1, msg };
            let mut target = None;
            let mut action = None;
            for tok in line.split_whitespace() {
                match tok.split_once(':') {
                    Some(("cmd_index", "*")) => target = Some(FaultTarget::Every),
                    Some(("cmd_index", n)) => {
                        let n = n.parse().map_err(|_| err(format!("bad command index {n:?}")))?;
                        target = Some(FaultTarget::Index(n));
                    }
                    Some(("action", a)) => {
                        action = Some(match a {
                            "error" => FaultAction::Error,
                            "drop" => FaultAction::Drop,
                            "garbage" => FaultAction::Garbage,
                            other => return Err(err(format!("unknown action {other:?}"))),
                        })
                    }
                    _ => return Err(err(format!("unexpected token {tok:?}"))),
                }
            }
            match (target, action) {
                (Some(target), Some(action)) => rules.push(FaultRule { target, action }),
                _ => return Err(err("rule needs cmd_index and action".into())),
            }
        }
        Ok(FaultScript::new(rules))
    }

    pub fn action_for(&self, index: u64) -> Option<FaultAction> {
        self.by_index.get(&index).copied().or(self.every)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SimMode {
    Command,
    Body,
}

/// The modem end of the AT dialogue.
#[derive(Debug, Clone)]
pub struct ModemSim {
    script: FaultScript,
    mode: SimMode,
    text_mode: bool,
    line: Vec<u8>,
    commands_seen: u64,
    next_ref: u8,
    sent: Vec<(String, Vec<u8>)>,
    recipient: Option<String>,
}

impl Default for ModemSim {
    fn default() -> Self {
        ModemSim::new(FaultScript::default())
    }
}

impl ModemSim {
    pub fn new(script: FaultScript) -> Self {
        ModemSim {
            script,
            mode: SimMode::Command,
            text_mode: false,
            line: Vec::new(),
            commands_seen: 0,
            next_ref: 1,
            sent: Vec::new(),
            recipient: None,
        }
    }

    /// Messages the modem accepted, as (recipient, body).
    pub fn sent_messages(&self) -> &[(String, Vec<u8>)] {
        &self.sent
    }

    pub fn commands_seen(&self) -> u64 {
        self.commands_seen
    }

    /// Consumes bytes from the host and returns the modem's reply bytes.
    pub fn respond(&mut self, incoming: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for &b in incoming {
            match self.mode {
                SimMode::Command => match b {
                    b'\r' => {
                        let cmd = std::mem::take(&mut self.line);
                        self.command(&cmd, &mut out);
                    }
                    b'\n' => {}
                    _ => self.line.push(b),
                },
                SimMode::Body => match b {
                    CTRL_Z => {
                        let body = std::mem::take(&mut self.line);
                        self.submit(body, &mut out);
                    }
                    ESC => {
                        self.line.clear();
                        self.mode = SimMode::Command;
                        self.recipient = None;
                        out.extend_from_slice(b"\r\nOK\r\n");
                    }
                    _ => self.line.push(b),
                },
            }
        }
        out
    }

    fn fault(&mut self) -> Option<FaultAction> {
        let action = self.script.action_for(self.commands_seen);
        self.commands_seen += 1;
        action
    }

    fn command(&mut self, cmd: &[u8], out: &mut Vec<u8>) {
        let cmd = cmd.trim_ascii();
        if cmd.is_empty() {
            return;
        }
        let is_sms = cmd.starts_with(b"AT+CMGS");
        match self.fault() {
            Some(FaultAction::Drop) => return,
            Some(FaultAction::Garbage) => {
                out.extend_from_slice(b"\r\n~#%GARBLE%#~\r\n");
                return;
            }
            Some(FaultAction::Error) => {
                out.extend_from_slice(if is_sms {
                    b"\r\n+CMS ERROR: 500\r\n"
                } else {
                    b"\r\nERROR\r\n"
                });
                return;
            }
            None => {}
        }
        let upper = cmd.to_ascii_uppercase();
        match upper.as_slice() {
            b"AT" => out.extend_from_slice(b"\r\nOK\r\n"),
            b"AT+CMGF=1" | b"AT+CMGF=0" => {
                self.text_mode = upper.ends_with(b"1");
                out.extend_from_slice(b"\r\nOK\r\n");
            }
            _ if is_sms => match parse_cmgs(cmd) {
                Some(number) if self.text_mode => {
                    self.recipient = Some(number);
                    self.mode = SimMode::Body;
                    out.extend_from_slice(b"\r\n> ");
                }
                Some(_) => out.extend_from_slice(b"\r\n+CMS ERROR: 302\r\n"),
                None => out.extend_from_slice(b"\r\nERROR\r\n"),
            },
            _ => out.extend_from_slice(b"\r\nERROR\r\n"),
        }
    }

    fn submit(&mut self, body: Vec<u8>, out: &mut Vec<u8>) {
        self.mode = SimMode::Command;
        let recipient = self.recipient.take().unwrap_or_default();
        match self.fault() {
            Some(FaultAction::Drop) => return,
            Some(FaultAction::Garbage) => {
                out.extend_from_slice(b"\r\n~#%GARBLE%#~\r\n");
                return;
            }
            Some(FaultAction::Error) => {
                out.extend_from_slice(b"\r\n+CMS ERROR: 500\r\n");
                return;
            }
            None => {}
        }
        let reference = self.next_ref;
        self.next_ref = self.next_ref.wrapping_add(1);
        self.sent.push((recipient, body));
        out.extend_from_slice(format!("\r\n+CMGS: {reference}\r\n\r\nOK\r\n").as_bytes());
    }
}

fn parse_cmgs(cmd: &[u8]) -> Option<String> {
    let rest = cmd.get(b"AT+CMGS=".len()..)?;
    let inner = rest.strip_prefix(b"\"")?.strip_suffix(b"\"")?;
    let s = std::str::from_utf8(inner).ok()?;
    PhoneNumber::parse(s).ok().map(|p| p.as_str().to_owned())
}

/// In-memory transport wired to a [`ModemSim`], running on a virtual clock.
///
/// A read with nothing queued advances the clock by the full timeout and
/// returns zero, so timeouts cost no wall time.
#[derive(Debug, Clone)]
pub struct SimTransport {
    modem: ModemSim,
    queued: VecDeque<u8>,
    chunks: Vec<usize>,
    next_chunk: usize,
    clock_ms: u64,
}

impl SimTransport {
    pub fn new(modem: ModemSim) -> Self {
        SimTransport {
            modem,
            queued: VecDeque::new(),
            chunks: Vec::new(),
            next_chunk: 0,
            clock_ms: 0,
        }
    }

    /// Caps each read at the given sizes, cycling through them.
    pub fn with_fragmentation(mut self, chunks: Vec<usize>) -> Self {
        assert!(chunks.iter().all(|&c| c > 0), "chunk sizes must be positive");
        self.chunks = chunks;
        self
    }

    pub fn modem(&self) -> &ModemSim {
        &self.modem
    }

    /// Virtual milliseconds spent waiting on reads.
    pub fn elapsed_ms(&self) -> u64 {
        self.clock_ms
    }
}

impl SerialTransport for SimTransport {
    fn write(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        let reply = self.modem.respond(bytes);
        self.queued.extend(reply);
        Ok(())
    }

    fn read(&mut self, buf: &mut [u8], timeout_ms: u64) -> Result<usize, TransportError> {
        if self.queued.is_empty() {
            self.clock_ms += timeout_ms;
            return Ok(0);
        }
        let mut limit = buf.len().min(self.queued.len());
        if !self.chunks.is_empty() {
            limit = limit.min(self.chunks[self.next_chunk % self.chunks.len()]);
            self.next_chunk += 1;
        }
        for (slot, b) in buf.iter_mut().zip(self.queued.drain(..limit)) {
            *slot = b;
        }
        Ok(limit)
    }
}
