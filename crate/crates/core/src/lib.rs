pub mod agent;
pub mod config;
pub mod eval;
pub mod gateway;
pub mod sample;
pub mod templates;
pub mod tools;
pub mod volume;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    pub mod volumes {}
    #[doc = include_str!("../../../book/src/agent-loop.md")]
    pub mod agent_loop {}
    #[doc = include_str!("../../../book/src/tools.md")]
    pub mod tools {}
    #[doc = include_str!("../../../book/src/quality-control.md")]
    pub mod quality_control {}
    #[doc = include_str!("../../../book/src/scripted-backends.md")]
    pub mod scripted_backends {}
    #[doc = include_str!("../../../book/src/templates.md")]
    pub mod templates {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    pub mod configuration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
