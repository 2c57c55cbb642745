use fhls_core::pragma::{
    decode_placeholder, encode_placeholder, PragmaDescriptor, PragmaKind, DEFAULT_PREFIX, MAX_NAME_LEN,
};
use fhls_core::testkit::random_descriptor;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn value() -> impl Strategy<Value = String> {
    "[a-z0-9]{1,4}(_[a-z0-9]{1,3})?"
}

fn descriptor() -> impl Strategy<Value = PragmaDescriptor> {
    (proptest::sample::select(PragmaKind::ALL.to_vec()), proptest::collection::btree_map("[a-z]{1,5}", value(), 0..=2))
        .prop_map(|(kind, args)| PragmaDescriptor { kind, args: args.into_iter().collect(), location: None })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1200))]

    #[test]
    fn decode_inverts_encode(d in descriptor()) {
        let name = encode_placeholder(&d, DEFAULT_PREFIX).unwrap();
        prop_assert!(name.len() <= MAX_NAME_LEN);
        prop_assert_eq!(decode_placeholder(&name, DEFAULT_PREFIX).unwrap(), Some(d));
    }

    #[test]
    fn encode_is_injective(a in descriptor(), b in descriptor()) {
        let (ea, eb) = (encode_placeholder(&a, DEFAULT_PREFIX).unwrap(), encode_placeholder(&b, DEFAULT_PREFIX).unwrap());
        prop_assert_eq!(ea == eb, a == b);
    }

    #[test]
    fn long_descriptors_are_rejected_not_truncated(
        kind in proptest::sample::select(PragmaKind::ALL.to_vec()),
        args in proptest::collection::btree_map("[a-z]{4,8}", "[a-z0-9]{6,10}", 3..=5),
    ) {
        let d = PragmaDescriptor { kind, args: args.into_iter().collect(), location: None };
        match encode_placeholder(&d, DEFAULT_PREFIX) {
            Ok(name) => prop_assert_eq!(decode_placeholder(&name, DEFAULT_PREFIX).unwrap(), Some(d)),
            Err(e) => prop_assert!(e.to_string().contains("the limit is 63"), "{}", e),
        }
    }
}

#[test]
fn thousand_generated_descriptors_round_trip_under_custom_prefixes() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for prefix in [DEFAULT_PREFIX, "hlsp", "x"] {
        for _ in 0..1000 {
            let d = random_descriptor(&mut rng);
            let name = encode_placeholder(&d, prefix).unwrap();
            assert_eq!(decode_placeholder(&name, prefix).unwrap(), Some(d), "{name}");
        }
    }
}
