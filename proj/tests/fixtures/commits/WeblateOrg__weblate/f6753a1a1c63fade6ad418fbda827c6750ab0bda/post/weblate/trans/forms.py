from django import forms
from django.utils.html import escape
from django.utils.translation import gettext as _


class NewUnitForm(forms.Form):
    def get_label(self, unit):
        label = escape(unit.translation.language)
        if unit.translation.language.code != "en":
            label += " ({})".format(_("Source"))
        return label
