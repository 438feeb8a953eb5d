// scratch probe for slope windows
use fraclab::fundsol::*;
use fraclab::geom::Point;
use fraclab::kernel::KernelSpec;

fn main() {
    for s in [0.3f64, 0.4, 0.5] {
        let (l, h) = (4.0, 0.125f64);
        let k = KernelSpec::fractional_laplacian(2, s).unwrap();
        let src = Point::x2(h / 2.0, h / 2.0);
        let est = estimate_fundamental_solution(&k, None, &src, l, h, 1e-11).unwrap();
        let curve = est.decay_curve();
        for (lo_mult, frac) in [(5.0f64, 0.25f64), (5.0, 0.2), (4.0, 0.25), (5.0, 0.3)] {
            let windowed: Vec<(f64, f64)> = curve
                .iter()
                .cloned()
                .filter(|(d, _)| *d >= lo_mult * h && *d <= frac * l)
                .collect();
            if windowed.len() < 10 { continue; }
            let slope = log_log_slope(&windowed);
            println!("s={s} window=[{}h,{}L] pts={} slope={:.4} target={:.1}",
                lo_mult, frac, windowed.len(), slope, -(2.0 - 2.0*s));
        }
    }
}
