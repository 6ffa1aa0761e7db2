fn main() -> std::process::ExitCode {
    firewatch_cli::main()
}
