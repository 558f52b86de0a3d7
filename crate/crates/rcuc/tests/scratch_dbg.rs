use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcuc::encode::*;
use rcuc::milp::*;
use rcuc::mlp::{InputScaling, MlpParams};

fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize]) -> MlpParams {
    let weights: Vec<Vec<f64>> = (0..sizes.len() - 1)
        .map(|l| (0..sizes[l] * sizes[l + 1]).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let biases: Vec<Vec<f64>> = (0..sizes.len() - 1)
        .map(|l| (0..sizes[l + 1]).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .collect();
    MlpParams { layer_sizes: sizes.to_vec(), weights, biases, input_scaling: InputScaling::identity(sizes[0]) }
}

#[test]
fn dbg_relaxation() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let p = random_net(&mut rng, &[2, 6, 1]);
    let bx = vec![(-1.0, 1.0); 2];
    let bounds = compute_bounds(&p, &bx);
    let build = |selection: &Selection| {
        let mut model = MilpModel::new();
        let xs: Vec<VarId> = (0..2).map(|i| model.add_continuous(format!("x{i}"), -1.0, 1.0)).collect();
        let enc = encode(&p, &bounds, selection, &mut model, &[(0, xs)], 0.0).unwrap();
        model.set_obj(enc.periods[0].output, 1.0);
        model
    };
    let mut h2 = Selection::new();
    for n in 0..6 { h2.insert((0, n)); }
    let m_all = build(&h2);
    let milp_sol = solve_milp(&m_all, &MilpOptions::exact()).unwrap();
    let lp_sol = solve_lp(&m_all).unwrap();
    eprintln!("all-triangle: milp {} lp {}", milp_sol.objective_value, lp_sol.objective);
    std::fs::write("/tmp/dbg_model.lp", m_all.to_lp_text()).unwrap();
    // feasibility of milp solution
    eprintln!("check: {:?}", m_all.check_feasible(&milp_sol.values, 1e-6));
}
