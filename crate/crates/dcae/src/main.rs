fn main() {
    // Restore default SIGPIPE so `dcae shapes | head` dies quietly like any
    // other line-oriented tool instead of panicking on the closed pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(dcae::run());
}
