use crate::error::{Result, SmiError};
use crate::transport::{Fabric, Program, TraceKind};

const PORT: u8 = 0;

fn dot(row: &[f32], x: &[f32]) -> f32 {
    row.iter().zip(x).fold(0.0, |acc, (a, b)| acc + a * b)
}

fn combine(alpha: f32, ax: f32, beta: f32, bx: f32) -> f32 {
    alpha * ax + beta * bx
}

/// `y = alpha*A*x + beta*B*x` computed in one place, same evaluation order as
/// the distributed version. Matrices are row-major `n x n`.
pub fn gesummv_reference(n: usize, alpha: f32, beta: f32, a: &[f32], b: &[f32], x: &[f32]) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let row = i * n..(i + 1) * n;
            combine(alpha, dot(&a[row.clone()], x), beta, dot(&b[row], x))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GesummvRun {
    pub y: Vec<f32>,
    pub cycles: u64,
    /// Elements carried by DATA packets the two ranks exchanged.
    pub elements_sent: u64,
}

/// Two-rank split: rank 0 holds `A` and streams `A*x` one element at a time to
/// rank 1, which holds `B` and produces `y`.
pub fn app_gesummv(
    fabric: &Fabric,
    n: usize,
    alpha: f32,
    beta: f32,
    a: &[f32],
    b: &[f32],
    x: &[f32],
) -> Result<GesummvRun> {
    if a.len() != n * n || b.len() != n * n || x.len() != n {
        return Err(SmiError::Config(format!("gesummv operands do not match n = {n}")));
    }
    if fabric.num_ranks() < 2 {
        return Err(SmiError::Config("gesummv needs two ranks".into()));
    }
    let mut fabric = fabric.clone();
    fabric.config_mut().trace = true;
    let rep = fabric.run(vec![
        Program::new(0, |ctx| {
            let mut ch = ctx.open_send_channel::<f32>(n, 1, PORT, &ctx.world())?;
            for i in 0..n {
                ch.push(dot(&a[i * n..(i + 1) * n], x))?;
            }
            Ok(Vec::new())
        }),
        Program::new(1, |ctx| {
            let mut ch = ctx.open_recv_channel::<f32>(n, 0, PORT, &ctx.world())?;
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let bx = dot(&b[i * n..(i + 1) * n], x);
                y.push(combine(alpha, ch.pop()?, beta, bx));
            }
            Ok(y)
        }),
    ])?;
    let elements_sent = rep
        .trace
        .iter()
        .filter(|e| e.kind == TraceKind::Emit && e.is_data())
        .map(|e| e.header.valid_count() as u64)
        .sum();
    let mut outputs = rep.outputs;
    Ok(GesummvRun {
        y: outputs.swap_remove(1),
        cycles: rep.cycles,
        elements_sent,
    })
}
