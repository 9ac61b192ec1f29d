fn main() -> std::process::ExitCode {
    coipo::cli::main()
}
