#![allow(dead_code)]

pub mod codec_run;
pub mod gradcases;
pub mod ldm;
pub mod metric_oracles;
pub mod oracles;
pub mod pipeline;
pub mod stereo;
