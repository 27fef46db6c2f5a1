//! Adam with named parameter groups. One shared step counter; per-group
//! learning rates; group state can be remapped when the Gaussian population
//! changes under density control.

#[derive(Debug, Clone)]
struct Group {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    groups: Vec<Group>,
}

impl Adam {
    pub fn new() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step_count: 0, groups: Vec::new() }
    }

    pub fn add_group(&mut self, len: usize, lr: f64) -> usize {
        self.groups.push(Group { lr, m: vec![0.0; len], v: vec![0.0; len] });
        self.groups.len() - 1
    }

    pub fn set_lr(&mut self, gid: usize, lr: f64) {
        self.groups[gid].lr = lr;
    }

    pub fn lr(&self, gid: usize) -> f64 {
        self.groups[gid].lr
    }

    /// Advances the shared step counter. Call once per iteration, before the
    /// per-group updates.
    pub fn begin_step(&mut self) {
        self.step_count += 1;
    }

    pub fn update(&mut self, gid: usize, params: &mut [f64], grads: &[f64]) {
        let g = &mut self.groups[gid];
        assert_eq!(params.len(), g.m.len(), "group {gid} size changed without remap");
        assert_eq!(params.len(), grads.len());
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            g.m[i] = self.beta1 * g.m[i] + (1.0 - self.beta1) * grads[i];
            g.v[i] = self.beta2 * g.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = g.m[i] / bc1;
            let vhat = g.v[i] / bc2;
            params[i] -= g.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    /// Rebuilds a group's state for a new population. `src[i]` gives the old
    /// element index whose state element `i` inherits, `None` for fresh zero
    /// state; `stride` is the number of scalars per element.
    pub fn remap_group(&mut self, gid: usize, src: &[Option<usize>], stride: usize) {
        let g = &mut self.groups[gid];
        let mut m = vec![0.0; src.len() * stride];
        let mut v = vec![0.0; src.len() * stride];
        for (new_i, old) in src.iter().enumerate() {
            if let Some(old_i) = old {
                for k in 0..stride {
                    m[new_i * stride + k] = g.m[old_i * stride + k];
                    v[new_i * stride + k] = g.v[old_i * stride + k];
                }
            }
        }
        g.m = m;
        g.v = v;
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_moves_by_lr() {
        // bias correction makes the first update lr * sign(grad) for any
        // nonzero gradient (up to eps).
        let mut opt = Adam::new();
        let gid = opt.add_group(2, 0.1);
        let mut p = vec![1.0, -2.0];
        opt.begin_step();
        opt.update(gid, &mut p, &[0.5, -3.0]);
        assert_relative_eq!(p[0], 1.0 - 0.1, epsilon = 1e-6);
        assert_relative_eq!(p[1], -2.0 + 0.1, epsilon = 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut opt = Adam::new();
        let gid = opt.add_group(1, 0.05);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let grad = 2.0 * (p[0] - 1.25);
            opt.begin_step();
            opt.update(gid, &mut p, &[grad]);
        }
        assert_relative_eq!(p[0], 1.25, epsilon = 1e-4);
    }

    #[test]
    fn remap_keeps_survivor_state() {
        let mut opt = Adam::new();
        let gid = opt.add_group(4, 0.1); // 2 elements, stride 2
        let mut p = vec![0.0; 4];
        opt.begin_step();
        opt.update(gid, &mut p, &[1.0, 1.0, 2.0, 2.0]);
        let m_before = opt.groups[gid].m.clone();
        // new population: [old 1, fresh, old 0]
        opt.remap_group(gid, &[Some(1), None, Some(0)], 2);
        let g = &opt.groups[gid];
        assert_eq!(g.m.len(), 6);
        assert_eq!(g.m[0], m_before[2]);
        assert_eq!(g.m[1], m_before[3]);
        assert_eq!(g.m[2], 0.0);
        assert_eq!(g.m[4], m_before[0]);
    }
}
