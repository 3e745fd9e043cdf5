fn main() -> std::process::ExitCode {
    mdseg::cli::main()
}
