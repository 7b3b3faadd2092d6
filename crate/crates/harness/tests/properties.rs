use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use oairelay_core::{Clock, SimClock, Verb};
use oairelay_harness::{FaultKind, FaultSpec, SimDp, SimDpConfig};
use proptest::prelude::*;

fn clock() -> SimClock {
    SimClock::new(Utc.with_ymd_and_hms(2002, 3, 1, 12, 0, 0).unwrap())
}

fn dp(config: SimDpConfig, clock: &SimClock) -> SimDp {
    SimDp::new(config, Arc::new(clock.clone()), "http://sim.test/oai".into())
}

/// Every page of a full ListRecords walk.
fn walk(dp: &SimDp) -> Vec<Vec<u8>> {
    dp.list_requests(Verb::ListRecords, "oai_dc")
        .iter()
        .map(|req| {
            let pairs = url::form_urlencoded::parse(req.to_query().as_bytes())
                .into_owned()
                .collect();
            dp.respond(pairs).1
        })
        .collect()
}

fn stamp(c: &SimClock) -> String {
    c.now().format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn record_fault() -> impl Strategy<Value = FaultKind> {
    prop::sample::select(
        FaultKind::ALL
            .into_iter()
            .filter(|k| !k.is_response_level())
            .collect::<Vec<_>>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// The same config, seed and script give byte-identical responses.
    #[test]
    fn identical_config_is_deterministic(
        n in 1usize..120,
        page in 1usize..40,
        kind in record_fault(),
        rate in 0.0f64..1.0,
        seed in any::<u64>(),
        mutations in 0usize..10,
    ) {
        let config = SimDpConfig::new("sim", n)
            .with_page_size(page)
            .with_fault(FaultSpec::new(kind, rate, seed))
            .with_fault(FaultSpec::new(FaultKind::MissingResponseDate, 0.3, seed));
        let (ca, cb) = (clock(), clock());
        let (a, b) = (dp(config.clone(), &ca), dp(config, &cb));
        prop_assert_eq!(walk(&a), walk(&b));
        ca.advance_secs(60);
        cb.advance_secs(60);
        prop_assert_eq!(a.mutate_random(mutations, seed), b.mutate_random(mutations, seed));
        prop_assert_eq!(walk(&a), walk(&b));
    }

    /// The records a fault touches are known before any request: they are
    /// exactly the ones served with metadata different from the clean copy.
    #[test]
    fn fault_footprint_is_enumerable(
        n in 1usize..150,
        kind in record_fault(),
        rate in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let d = dp(SimDpConfig::new("sim", n).with_fault(FaultSpec::new(kind, rate, seed)), &clock());
        let predicted = d.affected(kind);
        prop_assert_eq!(predicted.len(), (rate * n as f64).round() as usize);
        let corpus = d.corpus();
        let observed: BTreeSet<String> = corpus
            .records()
            .filter(|r| Some(d.metadata(r, "oai_dc")) != d.clean_metadata(&r.identifier, "oai_dc"))
            .map(|r| r.identifier.clone())
            .collect();
        prop_assert_eq!(&observed, &predicted);
        for id in &observed {
            prop_assert!(d.is_faulty(id));
        }
        prop_assert_eq!(d.unrepairable().is_empty(), kind.is_repairable() || predicted.is_empty());
    }

    /// Response datestamps come from the simulated clock only.
    #[test]
    fn response_date_follows_the_simulated_clock(advance in 0i64..10_000_000) {
        let c = clock();
        let d = dp(SimDpConfig::new("sim", 3), &c);
        c.advance_secs(advance);
        let (_, body) = d.respond(vec![("verb".into(), "Identify".into())]);
        let body = String::from_utf8(body).unwrap();
        let want = format!("<responseDate>{}</responseDate>", stamp(&c));
        prop_assert!(body.contains(&want), "{}", body);
    }
}
