use dilution_design::criteria::{Criterion, CriterionKind, Costs};
use dilution_design::optimizer::{optimize, OptimizerConfig};
use dilution_design::priors::Prior;
fn main() {
    let c = Criterion::with_costs(CriterionKind::G1Cost, Prior::point(60.0), Costs::G1_DEFAULT);
    let cfg = OptimizerConfig { grid_points: 300, budget_count: 20, ..OptimizerConfig::default() };
    let out = optimize(&c, 30.0, &cfg).unwrap();
    println!("measure: {:?}", out.measure);
    println!("objective: {}", out.objective);
    println!("cert: {:?}", out.certificate);
    println!("converged: {}", out.converged);
}
