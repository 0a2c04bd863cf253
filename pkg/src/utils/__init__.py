# Settings and artifact table helpers
