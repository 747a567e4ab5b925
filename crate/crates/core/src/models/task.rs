use super::Task;
use crate::numerics::Tensor;

/// Encoder input and likelihood target for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: Tensor,
    pub target: Tensor,
}

/// Splits full image rows into encoder input and likelihood target.
///
/// For structured prediction the first half of each row (the top of the
/// image) is the input and the second half the target.
pub fn task_adapt(task: Task, x_full: &Tensor) -> Batch {
    match task {
        Task::GenerativeModeling => Batch {
            input: x_full.clone(),
            target: x_full.clone(),
        },
        Task::StructuredPrediction => {
            let half = x_full.cols() / 2;
            Batch {
                input: x_full.slice_cols(0, half),
                target: x_full.slice_cols(half, x_full.cols()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generative_is_identity() {
        let x = Tensor::from_rows(&[vec![1.0, 0.0, 1.0, 1.0]]).unwrap();
        let b = task_adapt(Task::GenerativeModeling, &x);
        assert_eq!(b.input, x);
        assert_eq!(b.target, x);
    }

    #[test]
    fn structured_halves_are_disjoint() {
        let row: Vec<f64> = (0..784).map(|i| i as f64).collect();
        let x = Tensor::from_rows(&[row]).unwrap();
        let b = task_adapt(Task::StructuredPrediction, &x);
        assert_eq!(b.input.cols(), 392);
        assert_eq!(b.target.cols(), 392);
        assert_eq!(b.input.data()[391], 391.0);
        assert_eq!(b.target.data()[0], 392.0);
    }
}
