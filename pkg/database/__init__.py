# Run ledger directory (afc_runs.db is created here on first use)
