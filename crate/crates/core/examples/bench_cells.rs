use lamina::cell_stokes::*;
use lamina::geometry::*;
use lamina::grid::staggered::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dim: usize = args[1].parse().unwrap();
    let res: usize = args[2].parse().unwrap();
    let t0 = std::time::Instant::now();
    let geom = CellGeometry::build(dim, res, &GeometryDescriptor::Ball { radius: 0.3, center: None }).unwrap();
    let opts = SolveOptions::default();
    let set = solve_cell_problems(&geom, &opts).unwrap();
    let asm = StokesAssembly::new(StaggeredGrid::for_cell(&geom).unwrap());
    let c = assemble_fluid_coefficients(&set, &asm).unwrap();
    let comp = completeness_residual(&set, &asm);
    let scale = c.scale();
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            worst = worst.max((c.l[0][i][j] + c.l[1][i][j] + c.l_gamma[i][j]).abs());
            for a in 0..2 {
                worst = worst.max((c.l[a][i][j] + c.b[a][0][j][i] + c.b[a][1][j][i]).abs());
            }
        }
        for a in 0..2 {
            worst = worst.max((c.k[a][i][dim - 1] + c.l[a][i][dim - 1]).abs());
        }
    }
    println!(
        "dim {dim} res {res}: {:.1?} n={} completeness={comp:.2e} identity_rel={:.2e} iters={} method={}",
        t0.elapsed(), asm.n_free + asm.n_p, worst / scale,
        set.q_vert.stats.iterations, set.q_vert.stats.method
    );
}
