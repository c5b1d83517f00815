//! Contrastive fine-tuning and masked-language-model pretraining.

pub mod finetune;
pub mod loss;
pub mod masking;
pub mod mlm;
pub mod optim;
pub mod pairs;

pub use finetune::{batch_loss, finetune, loss_csv, TrainBatch, TrainConfig, TrainOutcome};
pub use loss::{adjacent_positives, contrastive_loss, infonce_from_similarities, infonce_loss};
pub use masking::{apply_span_mask, mask_with_placement, sample_placement, span_starts, SpanPlacement};
pub use mlm::{mlm_accuracy, mlm_mask, mlm_pretrain, MlmConfig};
pub use optim::AdamW;
pub use pairs::{build_pair_dataset, PairDataset, PairEntry, PairOptions};
