//! Quote-file parsing and the four-step cleaning procedure.
//!
//! Input is a delimited text file; which column holds which field is
//! configured through [`QuoteFormat`]. Timestamps default to the TAQ
//! `HHMMSSxxxxxxxxx` layout (time of day plus nine nanosecond digits).
//! An optional extra column carries a trading-day index so that several
//! sessions can live in one file.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NANOS_PER_SECOND: i64 = 1_000_000_000;
/// 09:30:00 in nanoseconds since midnight.
pub const SESSION_OPEN_NS: i64 = (9 * 3600 + 30 * 60) * NANOS_PER_SECOND;
/// 16:00:00 in nanoseconds since midnight.
pub const SESSION_CLOSE_NS: i64 = 16 * 3600 * NANOS_PER_SECOND;

/// One line of a quote file, before any validation of its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQuoteRecord {
    pub day: u32,
    pub timestamp_ns: i64,
    pub bid_price: f64,
    pub ask_price: f64,
    pub bid_size: i64,
    pub ask_size: i64,
    pub symbol: String,
}

/// A cleaned best-bid/best-ask update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteEvent {
    pub day: u32,
    pub timestamp_ns: i64,
    pub bid_price: f64,
    pub ask_price: f64,
    pub bid_volume: u64,
    pub ask_volume: u64,
    pub mid_price: f64,
}

impl QuoteEvent {
    pub fn new(
        day: u32,
        timestamp_ns: i64,
        bid_price: f64,
        ask_price: f64,
        bid_volume: u64,
        ask_volume: u64,
    ) -> Self {
        QuoteEvent {
            day,
            timestamp_ns,
            bid_price,
            ask_price,
            bid_volume,
            ask_volume,
            mid_price: (bid_price + ask_price) / 2.0,
        }
    }

    pub fn to_raw(&self, symbol: &str) -> RawQuoteRecord {
        RawQuoteRecord {
            day: self.day,
            timestamp_ns: self.timestamp_ns,
            bid_price: self.bid_price,
            ask_price: self.ask_price,
            bid_size: self.bid_volume as i64,
            ask_size: self.ask_volume as i64,
            symbol: symbol.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    /// `HHMMSS` followed by nine nanosecond digits.
    #[default]
    Taq,
    /// Plain integer nanoseconds since midnight.
    Nanos,
}

/// Column mapping for delimited quote files. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuoteFormat {
    pub delimiter: u8,
    pub has_header: bool,
    pub timestamp_format: TimestampFormat,
    pub timestamp: usize,
    pub bid_price: usize,
    pub ask_price: usize,
    pub bid_size: usize,
    pub ask_size: usize,
    pub symbol: usize,
    /// Trading-day column. A line without this field belongs to day 0.
    pub day: Option<usize>,
}

impl Default for QuoteFormat {
    fn default() -> Self {
        QuoteFormat {
            delimiter: b',',
            has_header: false,
            timestamp_format: TimestampFormat::Taq,
            timestamp: 0,
            bid_price: 1,
            ask_price: 2,
            bid_size: 3,
            ask_size: 4,
            symbol: 5,
            day: Some(6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseDiagnostic {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ParsedQuotes {
    pub records: Vec<RawQuoteRecord>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

pub fn parse_quote_file(path: impl AsRef<Path>, format: &QuoteFormat) -> Result<ParsedQuotes> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_quotes(BufReader::with_capacity(1 << 16, file), format)
}

pub fn parse_quotes<R: Read>(reader: R, format: &QuoteFormat) -> Result<ParsedQuotes> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(format.has_header)
        .flexible(true)
        .from_reader(reader);
    let mut out = ParsedQuotes::default();
    let mut record = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                match parse_record(&record, format) {
                    Ok(r) => out.records.push(r),
                    Err(message) => out.diagnostics.push(ParseDiagnostic { line, message }),
                }
            }
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(e.into());
                }
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.diagnostics.push(ParseDiagnostic {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

fn field<'a>(record: &'a csv::ByteRecord, idx: usize, name: &str) -> Result<&'a str, String> {
    let raw = record
        .get(idx)
        .ok_or_else(|| format!("missing column {idx} ({name})"))?;
    std::str::from_utf8(raw)
        .map(str::trim)
        .map_err(|_| format!("column {idx} ({name}) is not valid UTF-8"))
}

fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
    s.parse::<T>()
        .map_err(|_| format!("cannot parse {name} from {s:?}"))
}

fn parse_record(record: &csv::ByteRecord, format: &QuoteFormat) -> Result<RawQuoteRecord, String> {
    let ts = field(record, format.timestamp, "timestamp")?;
    let timestamp_ns = match format.timestamp_format {
        TimestampFormat::Taq => parse_taq_timestamp(ts)?,
        TimestampFormat::Nanos => num::<i64>(ts, "timestamp")?,
    };
    let day = match format.day {
        Some(idx) => match record.get(idx) {
            Some(_) => num::<u32>(field(record, idx, "day")?, "day")?,
            None => 0,
        },
        None => 0,
    };
    Ok(RawQuoteRecord {
        day,
        timestamp_ns,
        bid_price: num(field(record, format.bid_price, "bid_price")?, "bid_price")?,
        ask_price: num(field(record, format.ask_price, "ask_price")?, "ask_price")?,
        bid_size: num(field(record, format.bid_size, "bid_size")?, "bid_size")?,
        ask_size: num(field(record, format.ask_size, "ask_size")?, "ask_size")?,
        symbol: field(record, format.symbol, "symbol")?.to_string(),
    })
}

/// Decodes `HHMMSSxxxxxxxxx` into nanoseconds since midnight. A dropped
/// leading zero (`93000000000000`) is accepted.
pub fn parse_taq_timestamp(s: &str) -> Result<i64, String> {
    if s.is_empty() || s.len() > 15 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("malformed HHMMSSxxxxxxxxx timestamp {s:?}"));
    }
    let v: i64 = num(s, "timestamp")?;
    let nanos = v % NANOS_PER_SECOND;
    let secs = (v / NANOS_PER_SECOND) % 100;
    let mins = (v / (NANOS_PER_SECOND * 100)) % 100;
    let hours = v / (NANOS_PER_SECOND * 10_000);
    if hours >= 24 || mins >= 60 || secs >= 60 {
        return Err(format!("timestamp {s:?} is not a valid time of day"));
    }
    Ok(((hours * 60 + mins) * 60 + secs) * NANOS_PER_SECOND + nanos)
}

pub fn format_taq_timestamp(ns: i64) -> String {
    let nanos = ns % NANOS_PER_SECOND;
    let total_secs = ns / NANOS_PER_SECOND;
    let (h, m, s) = (total_secs / 3600, (total_secs / 60) % 60, total_secs % 60);
    format!("{h:02}{m:02}{s:02}{nanos:09}")
}

/// Writes events in the default column layout (with the day column).
pub fn write_events<W: Write>(mut w: W, symbol: &str, events: &[QuoteEvent]) -> Result<()> {
    let mut buf = String::with_capacity(96);
    for e in events {
        use std::fmt::Write as _;
        buf.clear();
        let _ = writeln!(
            buf,
            "{},{},{},{},{},{},{}",
            format_taq_timestamp(e.timestamp_ns),
            e.bid_price,
            e.ask_price,
            e.bid_volume,
            e.ask_volume,
            symbol,
            e.day
        );
        w.write_all(buf.as_bytes())
            .map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn write_events_file(path: impl AsRef<Path>, symbol: &str, events: &[QuoteEvent]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_events(&mut w, symbol, events)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    OutOfHours,
    NegativeOrCrossed,
    ZeroQuantity,
    PriceJump,
    WideSpread,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub total_in: usize,
    pub total_out: usize,
    pub out_of_hours: usize,
    pub negative_or_crossed: usize,
    pub zero_quantity: usize,
    pub price_jump: usize,
    pub wide_spread: usize,
}

impl CleaningReport {
    pub fn dropped(&self) -> usize {
        self.out_of_hours
            + self.negative_or_crossed
            + self.zero_quantity
            + self.price_jump
            + self.wide_spread
    }

    fn record(&mut self, reason: DropReason) {
        match reason {
            DropReason::OutOfHours => self.out_of_hours += 1,
            DropReason::NegativeOrCrossed => self.negative_or_crossed += 1,
            DropReason::ZeroQuantity => self.zero_quantity += 1,
            DropReason::PriceJump => self.price_jump += 1,
            DropReason::WideSpread => self.wide_spread += 1,
        }
    }
}

/// Returns the first rule that rejects a record, given the mid-price of the
/// previous surviving record.
pub fn rejection(
    timestamp_ns: i64,
    bid: f64,
    ask: f64,
    bid_size: i64,
    ask_size: i64,
    prev_mid: Option<f64>,
) -> Option<DropReason> {
    if !(SESSION_OPEN_NS..SESSION_CLOSE_NS).contains(&timestamp_ns) {
        return Some(DropReason::OutOfHours);
    }
    // Non-positive and non-finite prices share the negative-price rule.
    if !(bid.is_finite() && ask.is_finite())
        || bid <= 0.0
        || ask <= 0.0
        || bid_size < 0
        || ask_size < 0
        || bid > ask
    {
        return Some(DropReason::NegativeOrCrossed);
    }
    if bid_size == 0 || ask_size == 0 {
        return Some(DropReason::ZeroQuantity);
    }
    let mid = (bid + ask) / 2.0;
    if let Some(prev) = prev_mid {
        if mid > 1.5 * prev || mid < 0.5 * prev {
            return Some(DropReason::PriceJump);
        }
    }
    if ask - bid > 0.25 * mid || ask > 1.5 * bid {
        return Some(DropReason::WideSpread);
    }
    None
}

/// Applies the cleaning rules in order and attributes each dropped record to
/// the first rule that rejects it. Input must be ordered by (day, timestamp).
pub fn clean(records: &[RawQuoteRecord]) -> Result<(Vec<QuoteEvent>, CleaningReport)> {
    for (i, pair) in records.windows(2).enumerate() {
        if (pair[1].day, pair[1].timestamp_ns) < (pair[0].day, pair[0].timestamp_ns) {
            return Err(Error::OutOfOrder { index: i + 1 });
        }
    }
    let mut report = CleaningReport {
        total_in: records.len(),
        ..Default::default()
    };
    let mut events = Vec::with_capacity(records.len());
    let mut prev_mid: Option<f64> = None;
    for r in records {
        match rejection(
            r.timestamp_ns,
            r.bid_price,
            r.ask_price,
            r.bid_size,
            r.ask_size,
            prev_mid,
        ) {
            Some(reason) => report.record(reason),
            None => {
                let e = QuoteEvent::new(
                    r.day,
                    r.timestamp_ns,
                    r.bid_price,
                    r.ask_price,
                    r.bid_size as u64,
                    r.ask_size as u64,
                );
                prev_mid = Some(e.mid_price);
                events.push(e);
            }
        }
    }
    report.total_out = events.len();
    Ok((events, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(ts: i64, bid: f64, ask: f64, bs: i64, asz: i64) -> RawQuoteRecord {
        RawQuoteRecord {
            day: 0,
            timestamp_ns: ts,
            bid_price: bid,
            ask_price: ask,
            bid_size: bs,
            ask_size: asz,
            symbol: "TEST".into(),
        }
    }

    const T10: i64 = 10 * 3600 * NANOS_PER_SECOND;

    #[test]
    fn parses_example_line() {
        let parsed = parse_quotes(
            "093000000000000,100.00,100.02,300,500,AAPL\n".as_bytes(),
            &QuoteFormat::default(),
        )
        .unwrap();
        assert!(parsed.diagnostics.is_empty());
        let r = &parsed.records[0];
        assert_eq!(r.timestamp_ns, 34_200_000_000_000);
        assert_eq!(r.bid_price, 100.00);
        assert_eq!(r.ask_price, 100.02);
        assert_eq!((r.bid_size, r.ask_size), (300, 500));
        assert_eq!(r.symbol, "AAPL");
        assert_eq!(r.day, 0);
    }

    #[test]
    fn empty_input_gives_nothing() {
        let parsed = parse_quotes("".as_bytes(), &QuoteFormat::default()).unwrap();
        assert!(parsed.records.is_empty());
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn malformed_line_yields_diagnostic_with_line_number() {
        let text = "093000000000000,100.00,100.02,300,500,AAPL\n\
                    093000000000001,abc,100.02,300,500,AAPL\n";
        let parsed = parse_quotes(text.as_bytes(), &QuoteFormat::default()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.diagnostics.len(), 1);
        assert_eq!(parsed.diagnostics[0].line, 2);
        assert!(parsed.diagnostics[0].message.contains("bid_price"));
    }

    #[test]
    fn custom_column_order_and_delimiter() {
        let format = QuoteFormat {
            delimiter: b'|',
            has_header: true,
            timestamp_format: TimestampFormat::Nanos,
            symbol: 0,
            timestamp: 1,
            bid_price: 2,
            bid_size: 3,
            ask_price: 4,
            ask_size: 5,
            day: None,
        };
        let text = "sym|t|b|bs|a|as\nIBM|34200000000005|50.5|10|50.6|20\n";
        let parsed = parse_quotes(text.as_bytes(), &format).unwrap();
        assert_eq!(
            parsed.records[0],
            RawQuoteRecord {
                day: 0,
                timestamp_ns: 34_200_000_000_005,
                bid_price: 50.5,
                ask_price: 50.6,
                bid_size: 10,
                ask_size: 20,
                symbol: "IBM".into()
            }
        );
    }

    #[test]
    fn taq_timestamps_round_trip() {
        for ns in [SESSION_OPEN_NS, SESSION_CLOSE_NS - 1, 123_456_789, 0] {
            assert_eq!(parse_taq_timestamp(&format_taq_timestamp(ns)).unwrap(), ns);
        }
        assert_eq!(parse_taq_timestamp("93000000000000").unwrap(), SESSION_OPEN_NS);
        assert!(parse_taq_timestamp("096100000000000").is_err());
        assert!(parse_taq_timestamp("09300000000000x").is_err());
    }

    #[test]
    fn rule_one_drops_pre_open() {
        let ts = (9 * 3600 + 15 * 60) * NANOS_PER_SECOND;
        let (ev, rep) = clean(&[raw(ts, 100.0, 100.02, 1, 1)]).unwrap();
        assert!(ev.is_empty());
        assert_eq!(rep.out_of_hours, 1);
        let (ev, rep) = clean(&[raw(SESSION_CLOSE_NS, 100.0, 100.02, 1, 1)]).unwrap();
        assert!(ev.is_empty());
        assert_eq!(rep.out_of_hours, 1);
    }

    #[test]
    fn rule_two_drops_crossed_and_negative() {
        let recs = [
            raw(T10, 100.0, 99.0, 1, 1),
            raw(T10, -1.0, 99.0, 1, 1),
            raw(T10, 100.0, 100.1, -5, 1),
        ];
        let (ev, rep) = clean(&recs).unwrap();
        assert!(ev.is_empty());
        assert_eq!(rep.negative_or_crossed, 3);
    }

    #[test]
    fn rule_three_drops_zero_quantity() {
        let (_, rep) = clean(&[raw(T10, 100.0, 100.1, 0, 4)]).unwrap();
        assert_eq!(rep.zero_quantity, 1);
    }

    #[test]
    fn rule_four_price_jump_bounds() {
        // prev mid 100; 151 is dropped, 149 survives.
        let recs = [
            raw(T10, 99.99, 100.01, 1, 1),
            raw(T10 + 1, 150.99, 151.01, 1, 1),
            raw(T10 + 2, 148.99, 149.01, 1, 1),
        ];
        let (ev, rep) = clean(&recs).unwrap();
        assert_eq!(rep.price_jump, 1);
        assert_eq!(ev.len(), 2);
        assert!((ev[1].mid_price - 149.0).abs() < 1e-12);

        let recs = [raw(T10, 99.99, 100.01, 1, 1), raw(T10 + 1, 49.0, 49.02, 1, 1)];
        let (_, rep) = clean(&recs).unwrap();
        assert_eq!(rep.price_jump, 1);
    }

    #[test]
    fn rule_four_wide_spread() {
        // spread 30 > 25% of mid 115
        let (_, rep) = clean(&[raw(T10, 100.0, 130.0, 1, 1)]).unwrap();
        assert_eq!(rep.wide_spread, 1);
        let (ev, _) = clean(&[raw(T10, 100.0, 120.0, 1, 1)]).unwrap();
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn first_failing_rule_wins() {
        // crossed and zero size: attributed to rule (ii)
        let (_, rep) = clean(&[raw(T10, 100.0, 99.0, 0, 0)]).unwrap();
        assert_eq!(rep.negative_or_crossed, 1);
        assert_eq!(rep.zero_quantity, 0);
    }

    #[test]
    fn out_of_order_is_fatal() {
        let recs = [raw(T10 + 5, 100.0, 100.1, 1, 1), raw(T10, 100.0, 100.1, 1, 1)];
        match clean(&recs) {
            Err(Error::OutOfOrder { index }) => assert_eq!(index, 1),
            other => panic!("expected out-of-order error, got {other:?}"),
        }
    }

    #[test]
    fn day_index_orders_before_time() {
        let mut a = raw(T10 + 5, 100.0, 100.1, 1, 1);
        let mut b = raw(T10, 100.0, 100.1, 1, 1);
        a.day = 0;
        b.day = 1;
        let (ev, rep) = clean(&[a, b]).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(rep.total_out, 2);
    }

    #[test]
    fn write_then_parse_preserves_events() {
        let events = vec![
            QuoteEvent::new(0, SESSION_OPEN_NS + 17, 100.01, 100.03, 300, 200),
            QuoteEvent::new(3, T10, 100.0 + 0.1 + 0.2, 100.31, 1, 7),
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, "XYZ", &events).unwrap();
        let parsed = parse_quotes(&buf[..], &QuoteFormat::default()).unwrap();
        let (back, rep) = clean(&parsed.records).unwrap();
        assert_eq!(rep.total_out, 2);
        assert_eq!(back, events);
    }
}
