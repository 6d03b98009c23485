use proptest::prelude::*;

use lobbench::ingest::{clean, parse_quotes, write_events, QuoteFormat, RawQuoteRecord, NANOS_PER_SECOND, SESSION_OPEN_NS};

fn records() -> impl Strategy<Value = Vec<RawQuoteRecord>> {
    let one = (
        0u32..3,
        -600i64..24_000,
        prop_oneof![Just(-1.0), Just(0.0), 1.0f64..200.0],
        0.0f64..3.0,
        0i64..500,
        0i64..500,
    );
    prop::collection::vec(one, 0..200).prop_map(|mut v| {
        v.sort_by_key(|r| (r.0, r.1));
        v.into_iter()
            .map(|(day, secs, bid, widen, bs, asz)| RawQuoteRecord {
                day,
                timestamp_ns: SESSION_OPEN_NS + secs * NANOS_PER_SECOND,
                bid_price: bid,
                ask_price: bid * (1.0 + widen * 0.2) - if widen > 2.5 { 2.0 * bid } else { 0.0 },
                bid_size: bs,
                ask_size: asz,
                symbol: "P".into(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn cleaning_is_idempotent_and_reconciles(raw in records()) {
        let (once, report) = clean(&raw).unwrap();
        prop_assert_eq!(report.total_in, raw.len());
        prop_assert_eq!(report.total_out, once.len());
        prop_assert_eq!(report.total_in, report.total_out + report.dropped());
        let again: Vec<_> = once.iter().map(|e| e.to_raw("P")).collect();
        let (twice, report2) = clean(&again).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(report2.dropped(), 0);
    }

    #[test]
    fn written_events_parse_back_unchanged(raw in records()) {
        let (events, _) = clean(&raw).unwrap();
        let mut buf = Vec::new();
        write_events(&mut buf, "P", &events).unwrap();
        let parsed = parse_quotes(&buf[..], &QuoteFormat::default()).unwrap();
        prop_assert!(parsed.diagnostics.is_empty());
        let (back, report) = clean(&parsed.records).unwrap();
        prop_assert_eq!(back, events);
        prop_assert_eq!(report.dropped(), 0);
    }
}
