//! The chapters of `book/src`, included here so that `cargo test` runs
//! every code block in the guide.

macro_rules! chapter {
    ($name:ident, $file:literal) => {
        #[doc = include_str!(concat!("../../../book/src/", $file))]
        pub mod $name {}
    };
}

chapter!(introduction, "introduction.md");
chapter!(topology, "topology.md");
chapter!(telemetry, "telemetry.md");
chapter!(features, "features.md");
chapter!(encoder, "encoder.md");
chapter!(training, "training.md");
chapter!(evaluation, "evaluation.md");
chapter!(running, "running.md");
chapter!(formats, "formats.md");
