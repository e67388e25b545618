use std::fs;

use ctxdrift::drift::build_drift_series;
use ctxdrift::pipeline::{analyze_trace, AnalyzeOptions};
use ctxdrift::trace::{load_trace, synth_trace, write_trace, SynthConfig, Track, RECORDS_FILE};
use ctxdrift::Error;

#[test]
fn synthetic_trace_round_trips_bit_exactly() {
    let cfg = SynthConfig {
        with_scorers: true,
        ..SynthConfig::default()
    };
    let out = synth_trace(5, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_trace(&out.trace, dir.path()).unwrap();
    let loaded = load_trace(dir.path()).unwrap();
    assert_eq!(loaded, out.trace);
    for (k, rec) in &out.trace.records {
        let other = &loaded.records[k];
        assert!(rec
            .hidden
            .iter()
            .zip(&other.hidden)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(rec
            .attention
            .iter()
            .zip(&other.attention)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let again = tempfile::tempdir().unwrap();
    write_trace(&loaded, again.path()).unwrap();
    assert_eq!(
        fs::read(dir.path().join(RECORDS_FILE)).unwrap(),
        fs::read(again.path().join(RECORDS_FILE)).unwrap()
    );
}

#[test]
fn dropped_round_gives_partial_analysis() {
    let out = synth_trace(
        1,
        &SynthConfig {
            questions: 2,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_trace(&out.trace, dir.path()).unwrap();
    let path = dir.path().join(RECORDS_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| {
            !(l.contains("\"question_id\":\"q000\"")
                && l.contains("\"track\":\"relevant\"")
                && l.contains("\"round\":7,"))
        })
        .collect();
    assert_eq!(kept.len() + 1, text.lines().count());
    fs::write(&path, kept.join("\n") + "\n").unwrap();

    let t = load_trace(dir.path()).unwrap();
    assert!(t.partial);
    assert!(matches!(
        build_drift_series(&t, "q000", Track::Relevant),
        Err(Error::PartialSeries { missing, .. }) if missing == vec![7]
    ));
    let a = analyze_trace(&t, Some(&out.questions), &AnalyzeOptions::default()).unwrap();
    assert!(a.table.models[0].partial);
    assert!(a.warnings.iter().any(|w| w.contains("partial")));
    let q0 = a
        .per_question
        .iter()
        .find(|s| s.question_id == "q000" && s.track == Track::Relevant)
        .unwrap();
    assert_eq!(q0.points.len(), 14);
}

#[test]
fn zero_drift_trace_reports_zero_drift() {
    let cfg = SynthConfig::with_schedules(
        Track::ALL
            .into_iter()
            .map(|t| ctxdrift::trace::TrackSchedule::zero(t, 5))
            .collect(),
    );
    let out = synth_trace(2, &cfg).unwrap();
    let a = analyze_trace(&out.trace, None, &AnalyzeOptions::default()).unwrap();
    let m = &a.table.models[0];
    for t in Track::ALL {
        let s = m.drift_series(t).unwrap();
        for p in &s.points {
            assert_eq!(
                (p.cos_drift, p.ent_drift, p.js_drift, p.spearman),
                (0.0, 0.0, 0.0, 1.0)
            );
        }
    }
}
