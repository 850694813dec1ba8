def export(request):
    rows = load_rows()
    return render_csv(rows)
