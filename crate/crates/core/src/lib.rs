//! Coreset selection driven by concept-bottleneck difficulty scores.
//!
//! The pipeline has three stages, each in its own module:
//!
//! 1. [`bottleneck`]: keep `k` discriminative concepts per class and stack
//!    their text embeddings into a concept matrix.
//! 2. [`scorer`]: project visual embeddings onto the concepts, train a
//!    linear layer on the similarities, and score each sample by its area
//!    under the margin (AUM). A label-free mode scores against zero-shot
//!    pseudo-labels instead.
//! 3. [`sampler`]: prune the lowest-AUM samples and draw a coverage-centric
//!    stratified sample of the rest.
//!
//! No downstream model is trained at any point. [`tensor_io`] holds the file
//! formats and [`bench`] a synthetic harness for comparing coresets.
//!
//! ```
//! use concept_coreset::bench::{generate_synthetic, SyntheticSpec};
//! use concept_coreset::bottleneck::{assemble_bottleneck, select_discriminative};
//! use concept_coreset::sampler::{ccs_select, SelectionSpec};
//! use concept_coreset::scorer::{score_dataset, Supervision, TrainerConfig};
//!
//! let data = generate_synthetic(&SyntheticSpec { per_class: 20, ..Default::default() })?;
//! let selection = select_discriminative(&data.catalog, 5)?;
//! let bottleneck = assemble_bottleneck(selection, &data.concept_embeddings, true)?;
//! let scored = score_dataset(
//!     &data.visual,
//!     &bottleneck.embeddings,
//!     &Supervision::Labels(data.labels.clone()),
//!     &TrainerConfig { epochs: 10, ..Default::default() },
//!     false,
//! )?;
//! let spec = SelectionSpec { alpha: 0.5, beta: 0.1, bins: 10, ..Default::default() };
//! let coreset = ccs_select(&scored.table, &spec)?.coreset;
//! assert_eq!(coreset.len(), 100);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod bench;
pub mod bottleneck;
pub mod sampler;
pub mod scorer;
pub mod tensor_io;

pub use bottleneck::{Bottleneck, ConceptCatalog, ConceptEmbeddings, Selection};
pub use sampler::{Mode, SelectionSpec};
pub use scorer::{Likelihood, TrainerConfig};
pub use tensor_io::{Coreset, EmbeddingMatrix, LabelVector, ScoreTable};
