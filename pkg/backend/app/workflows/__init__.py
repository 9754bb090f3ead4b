# Verification workflows
