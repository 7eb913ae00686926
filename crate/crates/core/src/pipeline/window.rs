use crate::matrix::TrafficMatrix;

use super::PipelineError;

/// In-place working aggregate that closes once it holds exactly `target` pairs.
///
/// The first matrix after a close starts the next working aggregate, so a
/// finalized aggregate never contains the matrix that follows it.
#[derive(Debug)]
pub struct IncrementalWindow {
    target: u64,
    working: Option<TrafficMatrix>,
    members: u64,
}

impl IncrementalWindow {
    pub fn new(target: u64) -> Self {
        Self {
            target,
            working: None,
            members: 0,
        }
    }

    /// Folds `m` into the working aggregate and returns it if the window closed.
    pub fn push(&mut self, m: TrafficMatrix) -> Result<Option<TrafficMatrix>, PipelineError> {
        let mass = self.mass() + m.request_total();
        if mass > self.target {
            return Err(PipelineError::WindowOverrun {
                mass,
                target: self.target,
            });
        }
        match self.working.as_mut() {
            None => self.working = Some(m),
            Some(w) => w.add_assign(&m)?,
        }
        self.members += 1;
        if mass == self.target {
            self.members = 0;
            return Ok(self.working.take());
        }
        Ok(None)
    }

    /// Pairs held by the unfinished working aggregate.
    pub fn mass(&self) -> u64 {
        self.working.as_ref().map_or(0, |w| w.request_total())
    }

    /// Matrices folded into the unfinished working aggregate.
    pub fn members(&self) -> u64 {
        self.members
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ip::IpPair;

    fn base(k: u32) -> TrafficMatrix {
        TrafficMatrix::from_pairs(&[IpPair::new(k, 1), IpPair::new(k, 2)])
    }

    #[test]
    fn windows_of_two() {
        let mut w = IncrementalWindow::new(4);
        let bs: Vec<_> = (1..=4).map(base).collect();
        assert!(w.push(bs[0].clone()).unwrap().is_none());
        assert_eq!(w.mass(), 2);
        let l1 = w.push(bs[1].clone()).unwrap().unwrap();
        assert_eq!(l1, bs[0].add(&bs[1]).unwrap());
        assert_eq!(w.mass(), 0);
        assert!(w.push(bs[2].clone()).unwrap().is_none());
        let l2 = w.push(bs[3].clone()).unwrap().unwrap();
        assert_eq!(l2, bs[2].add(&bs[3]).unwrap());
    }

    #[test]
    fn singleton_window_closes_immediately() {
        let mut w = IncrementalWindow::new(2);
        assert_eq!(w.push(base(9)).unwrap(), Some(base(9)));
    }

    #[test]
    fn overrun_is_rejected() {
        let mut w = IncrementalWindow::new(3);
        w.push(base(1)).unwrap();
        assert!(matches!(w.push(base(2)), Err(PipelineError::WindowOverrun { mass: 4, target: 3 })));
        assert_eq!(w.mass(), 2);
    }
}
