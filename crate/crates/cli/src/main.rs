fn main() -> std::process::ExitCode {
    jnirm_cli::run(std::env::args_os())
}
