fn main() -> std::process::ExitCode {
    cellnas::cli::main()
}
