//! `glmm-gm fit|means|simulate|validate [options]`; see `glmm-gm --help`.

fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(glmm_gm::cli::main_with_args(std::env::args_os()))
}
