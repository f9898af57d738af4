use crate::grid::Grid;

/// A collection of named parameter grids.
///
/// Gradients are held in a value of the same type as the parameters, so every
/// parameter grid has a same-shape accumulator at the same name.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, &Grid)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Grid)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, g)| g.len()).sum()
    }

    fn zero_grads(&mut self) {
        for (_, g) in self.params_mut() {
            g.fill(0.0);
        }
    }

    /// `self += other`, parameter by parameter.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let theirs = other.params();
        for ((_, mine), (_, g)) in self.params_mut().into_iter().zip(theirs) {
            mine.add_assign(g);
        }
    }
}

/// A zeroed accumulator matching `p`.
pub fn zeros_like<P: Parameterized + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.zero_grads();
    z
}

pub(crate) fn prefixed<'a, T>(prefix: &str, items: Vec<(String, T)>) -> Vec<(String, T)>
where
    T: 'a,
{
    items
        .into_iter()
        .map(|(n, g)| (format!("{prefix}.{n}"), g))
        .collect()
}

impl<P: Parameterized> Parameterized for Vec<P> {
    fn params(&self) -> Vec<(String, &Grid)> {
        self.iter()
            .enumerate()
            .flat_map(|(i, p)| prefixed(&i.to_string(), p.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        self.iter_mut()
            .enumerate()
            .flat_map(|(i, p)| prefixed(&i.to_string(), p.params_mut()))
            .collect()
    }
}
