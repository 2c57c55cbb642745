//! Generated modules: parse/print/parse is the identity on the model, and
//! downgrade is total and idempotent on them.

use fhls_core::downgrade::{downgrade, DowngradeOptions, InferOptions};
use fhls_core::ir::{parse_module, print_module, validate_v7, Dialect, TypeExpr};
use fhls_core::testkit::random_module;
use rand::rngs::StdRng;
use rand::SeedableRng;

#[test]
fn parse_print_parse_on_generated_modules() {
    let mut rng = StdRng::seed_from_u64(42);
    for i in 0..600 {
        let text = random_module(&mut rng);
        let m = parse_module(&text).unwrap_or_else(|e| panic!("module {i}: {e}\n{text}"));
        let printed = print_module(&m, Dialect::Modern).unwrap();
        let again = parse_module(&printed).unwrap_or_else(|e| panic!("module {i} reprint: {e}\n{printed}"));
        assert_eq!(m, again, "module {i}\n{text}");
    }
}

#[test]
fn downgrade_on_generated_modules() {
    let mut rng = StdRng::seed_from_u64(4242);
    let opts = DowngradeOptions {
        infer: InferOptions { default_pointee: Some(TypeExpr::i8()) },
        ..DowngradeOptions::default()
    };
    for i in 0..300 {
        let text = random_module(&mut rng);
        let mut m = parse_module(&text).unwrap();
        downgrade(&mut m, &opts).unwrap_or_else(|e| panic!("module {i}: {e}\n{text}"));
        assert_eq!(validate_v7(&m, &opts.whitelist), vec![], "module {i}\n{text}");
        let once = m.clone();
        downgrade(&mut m, &opts).unwrap();
        assert_eq!(m, once, "module {i}\n{text}");
        let v7 = print_module(&m, Dialect::V7).unwrap();
        assert_eq!(parse_module(&v7).unwrap(), m, "module {i}\n{v7}");
    }
}
