// scratch diagnostics for the control synthesis optimizer (deleted later)
use nalgebra::{DMatrix, DVector};
use slidisk::conditions::ControlPath;
use slidisk::disk::{to_y, DiskParams, Potential, State};
use slidisk::integrate::{default_control_gain, simulate_controlled};

#[test]
#[ignore]
fn lm_trace() {
    let p = DiskParams::new(1.0, 0.1, 5.0, Potential::cosine(1.0, 1.0).unwrap()).unwrap();
    let start = to_y(&State::new(0.0, 0.0, 0.0, 0.0), 1.0);
    let target = to_y(&State::new(0.3, 2.0, 0.5, -0.2), 1.0);
    let t_total = 20.0;
    let n_knots = 16usize;
    let n_free = n_knots - 1;
    let spacing = t_total / n_free as f64;
    let h = spacing / (spacing / 0.02f64).ceil();
    let gain = default_control_gain(&p);
    println!("gain {gain} h {h}");

    let terminal_of = |vals: &DVector<f64>| -> DVector<f64> {
        let mut values = vec![0.0];
        values.extend(vals.iter().copied());
        let path = ControlPath::from_values(t_total, values).unwrap();
        let traj = simulate_controlled(&start, &p, &path, gain, t_total, h).unwrap();
        let e = traj.terminal();
        DVector::from_vec(vec![e.y1, e.y2, e.y1dot, e.y2dot])
    };
    let goal = DVector::from_vec(vec![target.y1, target.y2, target.y1dot, target.y2dot]);

    let mut x = DVector::<f64>::zeros(n_free);
    let mut r = terminal_of(&x) - &goal;
    let mut rnorm = r.norm();
    let mut lambda = 1e-3;
    println!("iter 0: |r| = {rnorm:.4e}");
    for iter in 1..=60 {
        let mut jac = DMatrix::<f64>::zeros(4, n_free);
        for j in 0..n_free {
            let step = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += step;
            let rp = terminal_of(&xp) - &goal;
            for i in 0..4 {
                jac[(i, j)] = (rp[i] - r[i]) / step;
            }
        }
        if iter == 1 {
            println!("J row norms: {:?}", (0..4).map(|i| jac.row(i).norm()).collect::<Vec<_>>());
            let svd = jac.clone().svd(false, false);
            println!("J singular values: {:?}", svd.singular_values.as_slice());
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * &r;
        let floor = 1e-6 * (jtj.trace() / n_free as f64).max(1e-12);
        let mut accepted = false;
        for _inner in 0..12 {
            let mut a = jtj.clone();
            for d in 0..n_free {
                a[(d, d)] += lambda * jtj[(d, d)].max(floor);
            }
            let delta = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => break,
            };
            let cand = &x + &delta;
            let rc = terminal_of(&cand) - &goal;
            if rc.norm() < rnorm {
                x = cand;
                r = rc;
                rnorm = r.norm();
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        println!("iter {iter}: |r| = {rnorm:.4e} lambda = {lambda:.2e} accepted = {accepted}");
        if rnorm < 1e-3 || lambda > 1e12 {
            break;
        }
    }
}
