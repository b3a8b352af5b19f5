//! Time-tagged detection records and the timetag file formats.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGNAL: u8 = 0;
pub const IDLER: u8 = 1;
pub const SYNC: u8 = 2;

/// Trial index of events that fall outside every measurement trial.
pub const NO_TRIAL: u32 = u32::MAX;

const FORMAT_TAG: &str = "afc-timetag 1";
const END_HEADER: &str = "END_HEADER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    pub time_ps: u64,
    pub channel: u8,
    pub trial: u32,
}

impl Event {
    pub fn new(channel: u8, time_ps: u64, trial: u32) -> Self {
        Self {
            time_ps,
            channel,
            trial,
        }
    }

    #[inline]
    pub fn key(&self) -> (u64, u8) {
        (self.time_ps, self.channel)
    }
}

pub fn channel_name(ch: u8) -> &'static str {
    match ch {
        SIGNAL => "signal",
        IDLER => "idler",
        SYNC => "sync",
        _ => "other",
    }
}

/// Events sorted by `(time, channel)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    /// Length of one trial after its sync event, if known.
    trial_length_ps: Option<u64>,
}

/// Index of the first out-of-order record, if any.
pub fn first_unsorted(events: &[Event]) -> Option<usize> {
    events.windows(2).position(|w| w[1].key() < w[0].key()).map(|i| i + 1)
}

impl EventStream {
    /// Wraps already sorted events; rejects unsorted input.
    pub fn from_sorted(events: Vec<Event>, trial_length_ps: Option<u64>) -> Result<Self> {
        if let Some(i) = first_unsorted(&events) {
            return Err(Error::Unsorted(i));
        }
        Ok(Self {
            events,
            trial_length_ps,
        })
    }

    /// Sorts raw `(channel, time)` records and assigns trials from the sync
    /// channel: an event belongs to the latest sync at or before it when it
    /// lies within `trial_length_ps` of that sync.
    pub fn from_records(mut records: Vec<(u8, u64)>, trial_length_ps: Option<u64>) -> Self {
        records.sort_unstable_by_key(|&(c, t)| (t, c));
        let mut events: Vec<Event> = records.into_iter().map(|(c, t)| Event::new(c, t, NO_TRIAL)).collect();
        assign_trials(&mut events, trial_length_ps);
        Self {
            events,
            trial_length_ps,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn trial_length_ps(&self) -> Option<u64> {
        self.trial_length_ps
    }

    pub fn count(&self, channel: u8) -> usize {
        self.events.iter().filter(|e| e.channel == channel).count()
    }

    pub fn times(&self, channel: u8) -> Vec<u64> {
        self.events
            .iter()
            .filter(|e| e.channel == channel)
            .map(|e| e.time_ps)
            .collect()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        write_binary_header(&mut w, self.trial_length_ps, Some(self.events.len()))?;
        write_binary_records(&mut w, &self.events)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "channel,time_ps")?;
        for e in &self.events {
            writeln!(w, "{},{}", e.channel, e.time_ps)?;
        }
        Ok(())
    }

    /// Reads either format; records are re-sorted and trials recomputed.
    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut first = String::new();
        r.read_line(&mut first)?;
        if first.trim_start().starts_with("format") {
            read_binary_body(first, r)
        } else {
            read_csv_body(first, r)
        }
    }
}

/// Header of the binary format. `records` may be omitted when the count is
/// not known in advance.
pub fn write_binary_header<W: Write>(mut w: W, trial_length_ps: Option<u64>, records: Option<usize>) -> Result<()> {
    writeln!(w, "format = {FORMAT_TAG}")?;
    writeln!(w, "t0_ps = 0")?;
    writeln!(w, "channels = 0:signal,1:idler,2:sync")?;
    if let Some(l) = trial_length_ps {
        writeln!(w, "trial_length_ps = {l}")?;
    }
    if let Some(n) = records {
        writeln!(w, "records = {n}")?;
    }
    writeln!(w, "{END_HEADER}")?;
    Ok(())
}

/// Appends 9-byte `{channel, time_ps}` little-endian records.
pub fn write_binary_records<W: Write>(mut w: W, events: &[Event]) -> Result<()> {
    let mut buf = Vec::with_capacity(events.len() * 9);
    for e in events {
        buf.push(e.channel);
        buf.extend_from_slice(&e.time_ps.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn assign_trials(events: &mut [Event], trial_length_ps: Option<u64>) {
    let mut current: Option<(u64, u32)> = None;
    let mut next_trial: u32 = 0;
    for e in events.iter_mut() {
        if e.channel == SYNC {
            current = Some((e.time_ps, next_trial));
            next_trial = next_trial.saturating_add(1);
        }
        e.trial = match (current, trial_length_ps) {
            (Some((t0, k)), Some(len)) if e.time_ps - t0 < len => k,
            (Some((_, k)), None) => k,
            _ => NO_TRIAL,
        };
    }
}

fn header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let (k, v) = line.split_once('=')?;
    (k.trim() == key).then(|| v.trim())
}

fn read_binary_body<R: BufRead>(first: String, mut r: R) -> Result<EventStream> {
    if header_value(&first, "format") != Some(FORMAT_TAG) {
        return Err(Error::Format(format!("unknown timetag format: {}", first.trim())));
    }
    let mut records_expected: Option<usize> = None;
    let mut trial_length = None;
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("missing END_HEADER".into()));
        }
        let l = line.trim();
        if l == END_HEADER {
            break;
        }
        if let Some(v) = header_value(l, "records") {
            records_expected = Some(v.parse().map_err(|_| Error::Format("bad record count".into()))?);
        }
        if let Some(v) = header_value(l, "trial_length_ps") {
            trial_length = Some(v.parse().map_err(|_| Error::Format("bad trial length".into()))?);
        }
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % 9 != 0 {
        return Err(Error::Format("truncated binary record".into()));
    }
    let records: Vec<(u8, u64)> = body
        .chunks_exact(9)
        .map(|c| {
            let mut t = [0u8; 8];
            t.copy_from_slice(&c[1..]);
            (c[0], u64::from_le_bytes(t))
        })
        .collect();
    if let Some(n) = records_expected {
        if n != records.len() {
            return Err(Error::Format(format!(
                "header announces {n} records, found {}",
                records.len()
            )));
        }
    }
    Ok(EventStream::from_records(records, trial_length))
}

fn read_csv_body<R: BufRead>(first: String, r: R) -> Result<EventStream> {
    let mut records = Vec::new();
    let mut parse = |line: &str, n: usize| -> Result<()> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("channel") {
            return Ok(());
        }
        let (c, t) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("line {n}: expected channel,time_ps")))?;
        let c: u8 = c
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {n}: bad channel")))?;
        let t: u64 = t
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {n}: bad time")))?;
        records.push((c, t));
        Ok(())
    };
    parse(&first, 1)?;
    for (i, line) in r.lines().enumerate() {
        parse(&line?, i + 2)?;
    }
    Ok(EventStream::from_records(records, None))
}
