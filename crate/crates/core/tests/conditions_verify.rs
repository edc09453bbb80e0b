use weakrk::conditions::{concrete_coefficient_check, verify_tableau};
use weakrk::tableau::Tableau;
use weakrk::Calculus;

fn run(name: &str, calc: Calculus, p: u32, m: u32) -> (bool, bool, String) {
    let inst = Tableau::builtin(name).unwrap().unwrap().instantiate(m).unwrap();
    let pat = verify_tableau(&inst, calc, p).unwrap();
    let con = concrete_coefficient_check(&inst, calc, p).unwrap();
    let records_ok = pat.records.iter().all(|r| r.satisfied);
    (records_ok && pat.passed(), con.passed(), pat.to_text())
}

#[test]
fn ri1wm_order_two() {
    for m in [1, 2] {
        let (pat, con, text) = run("ri1wm", Calculus::Ito, 2, m);
        assert!(pat, "m = {m}\n{text}");
        assert!(con, "m = {m}");
    }
}

#[test]
fn rs1wm_order_two_single_noise() {
    let (pat, con, text) = run("rs1wm", Calculus::Strat, 2, 1);
    assert!(pat, "{text}");
    assert!(con);
}

#[test]
fn euler_modes_agree() {
    for p in [1, 2] {
        let (pat, con, _) = run("euler", Calculus::Ito, p, 1);
        assert_eq!(pat, p == 1);
        assert_eq!(con, p == 1);
    }
}
