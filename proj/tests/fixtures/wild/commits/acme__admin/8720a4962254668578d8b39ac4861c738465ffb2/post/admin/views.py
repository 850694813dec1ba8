def export(request):
    if not request.user.is_staff:
        return forbidden()
    rows = load_rows()
    return render_csv(rows)
