//! Strict span scores, slot error rate and relation scores.

use bioext::eval::{relation_prf, ser, span_prf, Average, EvalRelation, EvalSpan, SerConfig};

fn main() -> bioext::Result<()> {
    let gold = vec![
        EvalSpan::new("d", 0, 18, "Microorganism").with_norm("80854"),
        EvalSpan::new("d", 50, 71, "Habitat").with_norm("OBT:000001"),
        EvalSpan::new("d", 80, 86, "Phenotype").with_norm("OBT:000002"),
    ];
    let pred = vec![
        EvalSpan::new("d", 0, 18, "Microorganism").with_norm("80854"),
        EvalSpan::new("d", 59, 71, "Habitat").with_norm("OBT:000001"),
        EvalSpan::new("d", 90, 95, "Habitat").with_norm("OBT:000003"),
    ];
    print!("{}", span_prf(&pred, &gold, Average::Micro).to_table());
    print!("{}", span_prf(&pred, &gold, Average::Macro).to_key_values("entities.macro"));
    let report = ser(&pred, &gold, &SerConfig::default())?;
    print!("{}", report.to_table());

    let rel = |t: &str, a, b| EvalRelation {
        doc_id: "d".into(),
        rel_type: t.into(),
        arg1: a,
        arg2: b,
    };
    let gold_rel = vec![rel("Lives_In", (0, 18), (50, 71)), rel("Exhibits", (0, 18), (80, 86))];
    let pred_rel = vec![rel("Lives_In", (0, 18), (50, 71))];
    print!("{}", relation_prf(&pred_rel, &gold_rel).to_key_values("relations"));
    Ok(())
}
