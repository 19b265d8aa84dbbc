fn main() -> std::process::ExitCode {
    kq_cli::main_entry()
}
