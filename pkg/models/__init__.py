# Scheduling model builders and solver glue
