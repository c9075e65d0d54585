fn main() -> std::process::ExitCode {
    ntfuzz::cli::main()
}
