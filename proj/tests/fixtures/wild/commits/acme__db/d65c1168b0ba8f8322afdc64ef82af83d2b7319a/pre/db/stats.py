def table_names(cursor):
    cursor.execute("SELECT name FROM sqlite_master")
    return [r[0] for r in cursor.fetchall()]
