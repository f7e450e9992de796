//! Decoders checked against listings produced by the reference Python WFDB
//! reader for the synthetic records in `testdata/`.

use std::path::PathBuf;

use ecgibi_core::ingest::{
    decode_format212, parse_annotation_stream, parse_header, parse_mit_annotations, read_record, BeatCodeSet,
    ChannelSelect, ReadOptions, DEFAULT_MAX_SAMPLES,
};

fn testdata() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata")
}

fn mitdb() -> PathBuf {
    testdata().join("synthetic/mitdb")
}

fn oracle(name: &str) -> String {
    std::fs::read_to_string(testdata().join("oracle").join(name)).unwrap()
}

fn symbol_code(sym: &str) -> u8 {
    match sym {
        "N" => 1,
        "V" => 5,
        "+" => 28,
        "~" => 14,
        other => panic!("symbol {other} not used by the fixtures"),
    }
}

#[test]
fn beat_annotations_match_reference_reader() {
    for rec in ["100", "101", "102"] {
        let bytes = std::fs::read(mitdb().join(format!("{rec}.atr"))).unwrap();
        let beats = parse_mit_annotations(&bytes, &BeatCodeSet::default()).unwrap();
        let expected: Vec<(usize, u8)> = oracle(&format!("{rec}_beats.txt"))
            .lines()
            .map(|l| {
                let mut it = l.split_whitespace();
                (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
            })
            .collect();
        assert_eq!(beats.len(), expected.len(), "record {rec}");
        for (i, &(s, c)) in expected.iter().enumerate() {
            assert_eq!((beats.beat_samples[i], beats.beat_codes[i]), (s, c), "record {rec} beat {i}");
        }
    }
}

#[test]
fn every_annotation_field_matches_reference_reader() {
    for rec in ["100", "102"] {
        let bytes = std::fs::read(mitdb().join(format!("{rec}.atr"))).unwrap();
        let anns = parse_annotation_stream(&bytes).unwrap();
        let text = oracle(&format!("{rec}_all_annotations.txt"));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(anns.len(), lines.len(), "record {rec}");
        for (a, line) in anns.iter().zip(&lines) {
            let f: Vec<&str> = line.splitn(6, ' ').collect();
            let aux = f[5].trim_matches('\'');
            assert_eq!(a.sample, f[0].parse::<u64>().unwrap(), "{line}");
            assert_eq!(a.code, symbol_code(f[1]), "{line}");
            assert_eq!(a.subtype, f[2].parse::<i16>().unwrap(), "{line}");
            assert_eq!(a.chan, f[3].parse::<u16>().unwrap(), "{line}");
            assert_eq!(a.num, f[4].parse::<i16>().unwrap(), "{line}");
            assert_eq!(String::from_utf8_lossy(&a.aux).trim_end_matches('\0'), aux, "{line}");
        }
    }
}

#[test]
fn format212_matches_reference_reader() {
    for rec in ["100", "101", "102"] {
        let header = parse_header(&std::fs::read_to_string(mitdb().join(format!("{rec}.hea"))).unwrap()).unwrap();
        let bytes = std::fs::read(mitdb().join(format!("{rec}.dat"))).unwrap();
        let raw = decode_format212(&bytes, header.n_samples, header.n_signals).unwrap();
        let text = oracle(&format!("{rec}_raw.txt"));
        let mut lines = text.lines();
        let n: usize = lines.next().unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
        assert_eq!(raw[0].len(), n);
        for ch in 0..header.n_signals {
            let sum: i64 = lines.next().unwrap().split_whitespace().nth(2).unwrap().parse().unwrap();
            let sumsq: i64 = lines.next().unwrap().split_whitespace().nth(2).unwrap().parse().unwrap();
            assert_eq!(raw[ch].iter().map(|&v| i64::from(v)).sum::<i64>(), sum, "{rec} ch {ch}");
            assert_eq!(raw[ch].iter().map(|&v| i64::from(v).pow(2)).sum::<i64>(), sumsq, "{rec} ch {ch}");
        }
        for (i, line) in lines.enumerate() {
            let row: Vec<i16> = line.split_whitespace().map(|v| v.parse().unwrap()).collect();
            assert_eq!(row, vec![raw[0][i], raw[1][i]], "{rec} frame {i}");
        }
    }
}

#[test]
fn read_record_truncates_and_converts() {
    let rec = read_record(&mitdb(), "100", &ReadOptions::default()).unwrap();
    assert_eq!(rec.header.n_samples, DEFAULT_MAX_SAMPLES);
    assert!(rec.channels.iter().all(|c| c.len() == DEFAULT_MAX_SAMPLES));
    assert!(rec.warnings.is_empty(), "{:?}", rec.warnings);
    let kept = oracle("100_beats.txt")
        .lines()
        .filter(|l| l.split_whitespace().next().unwrap().parse::<usize>().unwrap() < DEFAULT_MAX_SAMPLES)
        .count();
    assert_eq!(rec.annotations.len(), kept);

    let text = oracle("100_raw.txt");
    let first: Vec<f64> = text.lines().nth(5).unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert!((rec.signal()[0] - (first[0] - 1024.0) / 200.0).abs() < 1e-12);

    let v1 = read_record(
        &mitdb(),
        "100",
        &ReadOptions {
            channel: ChannelSelect::Label("V1".into()),
            ..ReadOptions::default()
        },
    )
    .unwrap();
    assert!((v1.signal()[0] - (first[1] - 1024.0) / 200.0).abs() < 1e-12);
}

#[test]
fn missing_record_is_reported_by_path() {
    let err = read_record(&mitdb(), "999", &ReadOptions::default()).unwrap_err();
    assert!(err.to_string().contains("999"), "{err}");
}
