use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;
use crate::regnet::Checkpoint;
use crate::svm::{BinaryLinearModel, LinearModel, MultiClassLinearModel};

/// Eval-mode forward of one input through a trained regressor. Multiclass
/// outputs keep the column order of the input, labelled by `class_labels`.
pub fn synthesize_classifier(
    checkpoint: &Checkpoint,
    input: &DenseMatrix,
    class_labels: Option<&[String]>,
) -> Result<LinearModel> {
    if input.shape() != checkpoint.input_shape {
        return Err(Error::Shape(format!(
            "{} regressor expects a {}x{} input, got {}x{}",
            checkpoint.modality.kind,
            checkpoint.input_shape.0,
            checkpoint.input_shape.1,
            input.rows(),
            input.cols()
        )));
    }
    let out = checkpoint.regressor.predict(input)?;
    if !out.is_finite() {
        return Err(Error::Argument(
            "regressor produced non-finite weights".into(),
        ));
    }
    if checkpoint.modality.kind.is_multiclass() {
        let labels = class_labels.ok_or_else(|| {
            Error::Argument("multiclass synthesis needs the class labels of the input stack".into())
        })?;
        Ok(LinearModel::MultiClass(MultiClassLinearModel::new(
            out,
            labels.to_vec(),
        )?))
    } else {
        Ok(LinearModel::Binary(BinaryLinearModel::new(
            out.into_data(),
        )?))
    }
}
