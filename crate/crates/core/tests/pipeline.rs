use crowdwarn::detector::{self, MatchConfig};
use crowdwarn::lag;
use crowdwarn::series::{self, CsvRow, HourTimestamp, HourlySeries, Signal};
use crowdwarn::sim::{self, SimConfig};
use crowdwarn::warning;
use proptest::prelude::*;

fn t0() -> HourTimestamp {
    HourTimestamp::from_ymdh(2014, 9, 1, 0).unwrap()
}

#[test]
fn flagship_pipeline_in_library() {
    let out = sim::generate(&SimConfig::flagship(42)).unwrap();
    assert_eq!(out.rows.len(), 120 * 24);
    assert_eq!(out.events.len(), 6);
    let ingested = series::ingest_series(&out.rows).unwrap();
    assert_eq!(ingested.gaps[0].filled_hours, 0);

    let reports = detector::sweep_pois(
        &ingested.series,
        &[1.0, 2.0, 3.0],
        &MatchConfig::default(),
        14,
    )
    .unwrap();
    // one POI plus the macro row per alpha
    assert_eq!(reports.len(), 6);
    assert_eq!(reports.last().unwrap().poi_id, detector::ALL_POIS);

    // Every simulated event onset is a truth hour at the fixed positioning line.
    let poi = &ingested.series[0];
    let lines = detector::fit_poi_lines(poi, 14).unwrap();
    let truth = detector::ground_truth(&poi.positioning, &lines.line_q).unwrap();
    for e in &out.events {
        assert!(
            truth.iter().any(|t| t.time == e.timestamp),
            "event {} not flagged",
            e.timestamp
        );
    }
}

#[test]
fn multi_poi_simulation_evaluates_each() {
    let mut cfg = SimConfig::flagship(9);
    cfg.poi_count = 3;
    cfg.days = 40;
    cfg.events.retain(|e| e.day_index < 40);
    let out = sim::generate(&cfg).unwrap();
    let ingested = series::ingest_series(&out.rows).unwrap();
    assert_eq!(ingested.series.len(), 3);
    let reports =
        detector::sweep_pois(&ingested.series, &[2.0], &MatchConfig::default(), 14).unwrap();
    assert_eq!(reports.len(), 4);
    let mean_recall = reports[..3].iter().map(|r| r.recall).sum::<f64>() / 3.0;
    assert!((reports[3].recall - mean_recall).abs() < 1e-12);
}

fn shift_series(s: &HourlySeries, hours: i64) -> HourlySeries {
    HourlySeries::new(
        s.poi_id(),
        s.signal(),
        s.start() + hours,
        s.values().to_vec(),
    )
    .unwrap()
}

#[test]
fn detection_is_invariant_to_whole_day_shifts() {
    let out = sim::generate(&SimConfig::flagship(5)).unwrap();
    let ingested = series::ingest_series(&out.rows).unwrap();
    let poi = &ingested.series[0];
    let score = |q: &HourlySeries, p: &HourlySeries| {
        let fit_m = warning::fit_log_peaks(&series::daily_peaks(q).unwrap()).unwrap();
        let fit_q = warning::fit_log_peaks(&series::daily_peaks(p).unwrap()).unwrap();
        let line_q = warning::positioning_line(&fit_q).unwrap();
        detector::alpha_sweep(
            q,
            p,
            &fit_m,
            &line_q,
            &[1.5, 2.0, 2.5],
            &MatchConfig::default(),
        )
        .unwrap()
    };
    let base = score(&poi.query, &poi.positioning);
    let shifted = score(
        &shift_series(&poi.query, 24 * 37),
        &shift_series(&poi.positioning, 24 * 37),
    );
    for (a, b) in base.iter().zip(&shifted) {
        assert_eq!(
            (a.tp_alerts, a.fp_alerts, a.detected_events, a.missed_events),
            (b.tp_alerts, b.fp_alerts, b.detected_events, b.missed_events)
        );
    }
}

#[test]
fn shuffling_destroys_mutual_information() {
    let out = sim::generate(&SimConfig::flagship(42)).unwrap();
    let ingested = series::ingest_series(&out.rows).unwrap();
    let poi = &ingested.series[0];
    let curve = lag::mutual_information(&poi.query, &poi.positioning, -2..=-2, 8).unwrap();

    let mut vals = poi.query.values().to_vec();
    let mut rng = sim::SimRng::new(3);
    for i in (1..vals.len()).rev() {
        let j = (rng.uniform() * (i + 1) as f64) as usize;
        vals.swap(i, j);
    }
    let shuffled =
        HourlySeries::new(poi.poi_id(), Signal::MapQuery, poi.query.start(), vals).unwrap();
    let null = lag::mutual_information(&shuffled, &poi.positioning, -2..=-2, 8).unwrap();
    assert!(curve.entries[0].mi_bits > 1.0);
    assert!(
        null.entries[0].mi_bits < 0.05,
        "shuffled MI {}",
        null.entries[0].mi_bits
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn series_csv_round_trip(
        pois in prop::collection::btree_map("[a-z_]{1,8}", (0i64..500, prop::collection::vec((0u64..100_000, 0u64..100_000), 1..80)), 1..4),
    ) {
        let mut rows = Vec::new();
        for (poi, (offset, values)) in &pois {
            for (k, (q, p)) in values.iter().enumerate() {
                rows.push(CsvRow {
                    poi_id: poi.clone(),
                    timestamp: t0() + *offset + k as i64,
                    query_count: *q,
                    positioning_count: *p,
                });
            }
        }
        let mut buf = Vec::new();
        series::write_rows(&mut buf, &rows).unwrap();
        let back = series::read_rows(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &rows);
        let ingested = series::ingest_series(&back).unwrap();
        prop_assert_eq!(series::export_rows(&ingested.series), rows);
    }
}

#[test]
fn uncoupled_simulation_has_no_query_lead() {
    let mut cfg = SimConfig::flagship(11);
    cfg.query_coupling = 0.0;
    cfg.events.clear();
    let out = sim::generate(&cfg).unwrap();
    let ingested = series::ingest_series(&out.rows).unwrap();
    let poi = &ingested.series[0];
    let curve = lag::mutual_information(&poi.query, &poi.positioning, -3..=0, 8).unwrap();
    let at = |l: i32| curve.entries.iter().find(|e| e.lag == l).unwrap().mi_bits;
    for l in -3..0 {
        assert!(at(l) < at(0), "lag {l}: {} vs lag 0: {}", at(l), at(0));
    }
}
