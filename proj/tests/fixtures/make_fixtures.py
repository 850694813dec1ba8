#!/usr/bin/env python3
"""Regenerates the commit fixtures under tests/fixtures.

Each commit is written as message.txt, pre/, post/ and a diff.patch produced
by git from the two trees. Rerunning gives byte-identical output.
"""

import hashlib
import os
import shutil
import subprocess
import sys
import tempfile
import textwrap
from pathlib import Path

ROOT = Path(__file__).resolve().parent


def dedent(s):
    return textwrap.dedent(s).lstrip("\n")


def git_diff(pre, post):
    with tempfile.TemporaryDirectory() as tmp:
        env = dict(os.environ, GIT_CONFIG_NOSYSTEM="1", HOME=tmp)
        repo = Path(tmp) / "r"
        repo.mkdir()
        subprocess.run(["git", "init", "-q"], cwd=repo, check=True, env=env)
        for path, text in pre.items():
            f = repo / path
            f.parent.mkdir(parents=True, exist_ok=True)
            f.write_text(text)
        subprocess.run(["git", "add", "-A"], cwd=repo, check=True, env=env)
        for path in pre:
            (repo / path).unlink()
        for path, text in post.items():
            f = repo / path
            f.parent.mkdir(parents=True, exist_ok=True)
            f.write_text(text)
        subprocess.run(["git", "add", "-A", "-N"], cwd=repo, check=True, env=env)
        out = subprocess.run(["git", "diff", "--no-color", "--no-renames"], cwd=repo, check=True,
                             capture_output=True, text=True, env=env)
        return out.stdout


def write_commit(base, slug, hash_, message, pre, post):
    d = base / slug / hash_
    if d.exists():
        shutil.rmtree(d)
    for side, files in (("pre", pre), ("post", post)):
        for path, text in files.items():
            f = d / side / path
            f.parent.mkdir(parents=True, exist_ok=True)
            f.write_text(text)
    (d / "message.txt").write_text(message + "\n")
    (d / "diff.patch").write_text(git_diff(pre, post))


def fake_hash(*parts):
    return hashlib.sha1("\0".join(parts).encode()).hexdigest()


# Fix-pattern commits: (slug, hash, cve, path, message, pre, post, category)
PATTERNS = []


def pattern(slug, hash_, cve, path, message, pre, post, category):
    PATTERNS.append((slug, hash_, cve, path, message, dedent(pre), dedent(post), category))


pattern("janeczku__calibre-web", "0c0313f375bed7b035c8c0482bbb09599e16bfcf", "CVE-2022-0273", "cps/shelf.py",
        "Fix public shelf flag handling", """
    from flask import flash, redirect, request, url_for


    def create_edit_shelf(shelf, page_title, page, shelf_id=False):
        to_save = request.form.to_dict()
        if not current_user.role_edit_shelfs() and to_save.get("is_public") == "on":
            flash("Sorry you are not allowed to create a public shelf", category="error")
            return redirect(url_for('web.index'))
        is_public = 1 if to_save.get("is_public") else 0
        if config.config_kobo_sync:
            shelf.kobo_sync = True if to_save.get("kobo_sync") else False
        shelf.is_public = is_public
        return shelf
    """, """
    from flask import flash, redirect, request, url_for


    def create_edit_shelf(shelf, page_title, page, shelf_id=False):
        to_save = request.form.to_dict()
        if not current_user.role_edit_shelfs() and to_save.get("is_public") == "on":
            flash("Sorry you are not allowed to create a public shelf", category="error")
            return redirect(url_for('web.index'))
        is_public = 1 if to_save.get("is_public") == "on" else 0
        if config.config_kobo_sync:
            shelf.kobo_sync = True if to_save.get("kobo_sync") else False
        shelf.is_public = is_public
        return shelf
    """, "SanityCheck")

pattern("pwnsys__actualsys", "c658b4f3e57258acf5f6207a90c2f2169698ae22", "CVE-2022-46179", "core.py",
        "Only skip the password prompt on real CI runs", """
    import logging
    import os


    def actualsys():
        print("logged in")


    def login(uname, pwdhash, cred, attemps):
        if attemps == 6:
            ## Brute force protection
            raise Exception("Too many password attempts.")
        if os.environ.get('GITHUB_ACTIONS') != "":
            logging.warning("Running on Github Actions")
            actualsys()
        elif uname == cred.name and pwdhash == cred.password:
            actualsys()
    """, """
    import logging
    import os


    def actualsys():
        print("logged in")


    def login(uname, pwdhash, cred, attemps):
        if attemps == 6:
            ## Brute force protection
            raise Exception("Too many password attempts.")
        if os.environ.get('GITHUB_ACTIONS') == "true":
            logging.warning("Running on Github Actions")
            actualsys()
        elif uname == cred.name and pwdhash == cred.password:
            actualsys()
    """, "SanityCheck")

pattern("twisted__twisted", "8ebfa8f6577431226e109ff98ba48f5152a2c416", "CVE-2022-24801", "src/twisted/web/http.py",
        "Reject non-digit Content-Length values", """
    class HTTPChannel:
        def headerReceived(self, line):
            header, data = line.split(b":", 1)
            header = header.lower()
            data = data.strip()

            def fail():
                self._respondToBadRequestAndDisconnect()
                return False

            if header == b"content-length":
                try:
                    length = int(data)
                except ValueError:
                    return fail()
                self.length = length
            return True
    """, """
    class HTTPChannel:
        def headerReceived(self, line):
            header, data = line.split(b":", 1)
            header = header.lower()
            data = data.strip()

            def fail():
                self._respondToBadRequestAndDisconnect()
                return False

            if header == b"content-length":
                if not data.isdigit():
                    return fail()
                try:
                    length = int(data)
                except ValueError:
                    return fail()
                self.length = length
            return True
    """, "SanityCheck")

pattern("Kozea__Radicale", "4bfe7c9f7991d534c8b9fbe153af9d341f925f98", "CVE-2015-8748", "radicale/rights/regex.py",
        "Escape user and collection names used in rights patterns", """
    import os.path
    import re
    from configparser import ConfigParser


    def _read_from_sections(user, collection_url, permission):
        filename = os.path.expanduser(FILENAME)
        regex = ConfigParser({"login": user, "path": collection_url})
        regex.read(filename)
        for section in regex.sections():
            re_user = regex.get(section, "user")
            re_collection = regex.get(section, "collection")
            if re.match(re_user, user) and re.match(re_collection, collection_url):
                if permission in regex.get(section, "permission"):
                    return True
        return False
    """, """
    import os.path
    import re
    from configparser import ConfigParser


    def _read_from_sections(user, collection_url, permission):
        filename = os.path.expanduser(FILENAME)
        # Prevent "regex injection"
        user_escaped = re.escape(user)
        collection_url_escaped = re.escape(collection_url)
        regex = ConfigParser({"login": user_escaped, "path": collection_url_escaped})
        regex.read(filename)
        for section in regex.sections():
            re_user = regex.get(section, "user")
            re_collection = regex.get(section, "collection")
            if re.match(re_user, user) and re.match(re_collection, collection_url):
                if permission in regex.get(section, "permission"):
                    return True
        return False
    """, "ApiUsage")

pattern("WeblateOrg__weblate", "f6753a1a1c63fade6ad418fbda827c6750ab0bda", "CVE-2022-24710", "weblate/trans/forms.py",
        "Escape language name in unit form label", """
    from django import forms
    from django.utils.translation import gettext as _


    class NewUnitForm(forms.Form):
        def get_label(self, unit):
            label = str(unit.translation.language)
            if unit.translation.language.code != "en":
                label += " ({})".format(_("Source"))
            return label
    """, """
    from django import forms
    from django.utils.html import escape
    from django.utils.translation import gettext as _


    class NewUnitForm(forms.Form):
        def get_label(self, unit):
            label = escape(unit.translation.language)
            if unit.translation.language.code != "en":
                label += " ({})".format(_("Source"))
            return label
    """, "ApiUsage")

pattern("themoken__canto-curses", "2817869f98c54975f31e2dd674c1aefa70749cca", "CVE-2013-7416", "canto_curses/guibase.py",
        "Quote href before handing it to the shell", """
    import os
    import shlex


    class GuiBase:
        def _fork(self, path, href, text, fetch=False):
            if fetch:
                href = self._fetch(href)
            path = path.replace("%u", href)
            pid = os.fork()
            if not pid:
                os.execv("/bin/sh", ["/bin/sh", "-c", path])
            return pid
    """, """
    import os
    import shlex


    class GuiBase:
        def _fork(self, path, href, text, fetch=False):
            if fetch:
                href = self._fetch(href)
            href = shlex.quote(href)
            path = path.replace("%u", href)
            pid = os.fork()
            if not pid:
                os.execv("/bin/sh", ["/bin/sh", "-c", path])
            return pid
    """, "ApiUsage")

pattern("bildsben__iTunesRPC-Remastered", "1eb1e5428f0926b2829a0bbbb65b0d946e608593", "CVE-2022-23609",
        "upload/server.py", "Sanitize uploaded file names before removal", """
    import os
    from os import remove

    from flask import Flask, request

    app = Flask(__name__)
    all_files = []


    @app.route("/upload", methods=["POST"])
    def uploadimage():
        filename = all_files[0][1] + all_files[0][2]
        remove(filename)
        del all_files[0]
        length = len(all_files)
        return str(length)
    """, """
    import os
    import werkzeug.utils
    from os import remove

    from flask import Flask, request

    app = Flask(__name__)
    all_files = []


    @app.route("/upload", methods=["POST"])
    def uploadimage():
        filename = all_files[0][1] + all_files[0][2]
        remove(werkzeug.utils.secure_filename(filename))
        del all_files[0]
        length = len(all_files)
        return str(length)
    """, "ApiUsage")

pattern("tryton__queue", "fc2c1ea1b8d795094abb15ac73cab90830534e04", "CVE-2014-125082", "queue/model.py",
        "Escape quotes in the queue id filter", """
    class QueueFilter:
        def _get_filter(self):
            clauses = []
            if self.queueid:
                clauses.append("queue_id = '%s'" % self.queueid)
            if self.status:
                clauses.append("status = '%s'" % self.status)
            return " AND ".join(clauses)
    """, """
    class QueueFilter:
        def _get_filter(self):
            clauses = []
            if self.queueid:
                clauses.append("queue_id = '%s'" % self.queueid.replace("'", "''").replace('"', '""'))
            if self.status:
                clauses.append("status = '%s'" % self.status)
            return " AND ".join(clauses)
    """, "RegexUpdate")

pattern("jupyter__notebook", "08c4c898182edbe97aadef1815cce50448f975cb", "CVE-2019-10255", "notebook/auth/login.py",
        "Encode backslashes in redirect targets", """
    from urllib.parse import urlparse


    class LoginHandler:
        def _redirect_safe(self, url, default=None):
            if default is None:
                default = self.base_url
            parsed = urlparse(url)
            if parsed.netloc or not (parsed.path + '/').startswith(self.base_url):
                url = default
            self.redirect(url)
    """, """
    from urllib.parse import urlparse


    class LoginHandler:
        def _redirect_safe(self, url, default=None):
            if default is None:
                default = self.base_url
            # \\ is not valid in urls, but some browsers treat it as /
            # instead of %5C, causing `\\\\` to behave as `//`
            url = url.replace("\\\\", "%5C")
            parsed = urlparse(url)
            if parsed.netloc or not (parsed.path + '/').startswith(self.base_url):
                url = default
            self.redirect(url)
    """, "RegexUpdate")

pattern("django-helpdesk__django-helpdesk", "a22eb0673fe0b7784f99c6b5fd343b64a6700f06", "CVE-2021-3994",
        "helpdesk/models.py", "Tighten the markdown link pattern", r"""
    import re


    def get_markdown(text):
        if not text:
            return ""
        pattern = fr'([\[\s\S\]]*?)\(([\s\S]*?):([\[\s\S\]]*?)\)'
        # Regex check
        if re.match(pattern, text):
            # get get value of group regex
            scheme = re.search(pattern, text, re.IGNORECASE).group(2)
            if scheme in ALLOWED_URL_SCHEMES:
                replacement = '\\1(\\2:\\3)'
            else:
                replacement = '\\1(\\3)'
            text = re.sub(pattern, replacement, text, flags=re.IGNORECASE)
        return text
    """, r"""
    import re


    def get_markdown(text):
        if not text:
            return ""
        pattern = fr'([\[\s\S\]]*?)\(([\s\S]*?):([\s\S]*?)\)'
        # Regex check
        if re.match(pattern, text):
            # get get value of group regex
            scheme = re.search(pattern, text, re.IGNORECASE).group(2)
            if scheme in ALLOWED_URL_SCHEMES:
                replacement = '\\1(\\2:\\3)'
            else:
                replacement = '\\1(\\3)'
            text = re.sub(pattern, replacement, text, flags=re.IGNORECASE)
        return text
    """, "RegexUpdate")

pattern("nsupdate-info__nsupdate.info", "60a3fe559c453bc36b0ec3e5dd39c1303640a59a", "CVE-2019-25091",
        "src/nsupdate/settings/base.py", "Set HttpOnly on the CSRF cookie", """
    SESSION_COOKIE_NAME = 'sessionid'
    SESSION_COOKIE_HTTPONLY = True
    SESSION_COOKIE_SECURE = False

    CSRF_COOKIE_NAME = 'csrftoken'
    CSRF_COOKIE_HTTPONLY = False
    CSRF_COOKIE_SECURE = False
    """, """
    SESSION_COOKIE_NAME = 'sessionid'
    SESSION_COOKIE_HTTPONLY = True
    SESSION_COOKIE_SECURE = False

    CSRF_COOKIE_NAME = 'csrftoken'
    CSRF_COOKIE_HTTPONLY = True
    CSRF_COOKIE_SECURE = False
    """, "SecurityProperty")

pattern("lxml__lxml", "10ec1b4e9f93713513a3264ed6158af22492f270", "CVE-2021-28957", "src/lxml/html/defs.py",
        "Treat formaction as a link attribute", """
    link_attrs = frozenset([
        'action', 'archive', 'background', 'cite', 'classid',
        'codebase', 'data', 'href', 'longdesc', 'profile', 'src',
        'usemap',
        # Not standard:
        'dynsrc', 'lowsrc',
        ])
    """, """
    link_attrs = frozenset([
        'action', 'archive', 'background', 'cite', 'classid',
        'codebase', 'data', 'href', 'longdesc', 'profile', 'src',
        'usemap',
        # Not standard:
        'dynsrc', 'lowsrc',
        # HTML5 formaction
        'formaction'
        ])
    """, "SecurityProperty")

pattern("zopefoundation__Products.PluggableAuthService", "2dad81128250cb2e5d950cddc9d3c0314a80b4bb",
        "CVE-2021-21336", "src/Products/PluggableAuthService/plugins/ZODBRoleManager.py",
        "Make enumerateRoles private", '''
    from AccessControl import ClassSecurityInfo


    class ZODBRoleManager(BasePlugin):
        security = ClassSecurityInfo()

        @security.private
        def getRolesForPrincipal(self, principal, request=None):
            result = list(self._principal_roles.get(principal.getId(), ()))
            return tuple(result)

        #
        #   IRoleEnumerationPlugin implementation
        #
        def enumerateRoles(self, id=None, exact_match=False, sort_by=None, max_results=None, **kw):
            """ See IRoleEnumerationPlugin.
            """
            return []
    ''', '''
    from AccessControl import ClassSecurityInfo


    class ZODBRoleManager(BasePlugin):
        security = ClassSecurityInfo()

        @security.private
        def getRolesForPrincipal(self, principal, request=None):
            result = list(self._principal_roles.get(principal.getId(), ()))
            return tuple(result)

        #
        #   IRoleEnumerationPlugin implementation
        #
        @security.private
        def enumerateRoles(self, id=None, exact_match=False, sort_by=None, max_results=None, **kw):
            """ See IRoleEnumerationPlugin.
            """
            return []
    ''', "SecurityProperty")


# Wild commits: (slug, message, path, pre, post). The first ten messages carry
# a keyword; the rest do not.
WILD = []


def wild(slug, message, path, pre, post):
    WILD.append((slug, message, path, dedent(pre) if pre is not None else None, dedent(post)))


wild("acme__webapp", "Fix DoS in parser when the header is huge", "webapp/parser.py", """
    def parse_header(raw):
        name, value = raw.split(":", 1)
        return name.strip(), value.strip()
    """, """
    MAX_HEADER = 8192


    def parse_header(raw):
        if len(raw) > MAX_HEADER:
            raise ValueError("header too long")
        name, value = raw.split(":", 1)
        return name.strip(), value.strip()
    """)
wild("acme__webapp", "Prevent path traversal via dot dot slash sequences", "webapp/files.py", """
    import os


    def open_upload(root, name):
        path = os.path.join(root, name)
        return open(path, "rb")
    """, """
    import os

    from werkzeug.utils import safe_join


    def open_upload(root, name):
        path = safe_join(root, name)
        if path is None:
            raise PermissionError(name)
        return open(path, "rb")
    """)
wild("acme__cache", "Fix race condition when two workers refresh the cache", "cache/store.py", """
    import threading

    _lock = threading.Lock()
    _data = {}


    def refresh(key, loader):
        value = loader(key)
        _data[key] = value
        return value
    """, """
    import threading

    _lock = threading.Lock()
    _data = {}


    def refresh(key, loader):
        with _lock:
            value = loader(key)
            _data[key] = value
        return value
    """)
wild("acme__db", "Avoid SQL injection in user lookup", "db/users.py", """
    def find_user(cursor, name):
        cursor.execute("SELECT * FROM users WHERE name = '%s'" % name)
        return cursor.fetchone()
    """, """
    def find_user(cursor, name):
        cursor.execute("SELECT * FROM users WHERE name = ?", (name,))
        return cursor.fetchone()
    """)
wild("acme__webapp", "Fix open redirect after login", "webapp/login.py", """
    def next_url(request):
        target = request.args.get("next", "/")
        return target
    """, """
    from urllib.parse import urlparse


    def next_url(request):
        target = request.args.get("next", "/")
        if urlparse(target).netloc:
            target = "/"
        return target
    """)
wild("acme__imaging", "Guard against integer overflow in tile size", "imaging/tiles.py", """
    def tile_bytes(width, height, depth):
        size = width * height * depth
        return bytearray(size)
    """, """
    LIMIT = 1 << 31


    def tile_bytes(width, height, depth):
        size = width * height * depth
        if size <= 0 or size >= LIMIT:
            raise ValueError("tile too large")
        return bytearray(size)
    """)
wild("acme__archive", "Reject malicious member names when extracting", "archive/extract.py", """
    import os
    import tarfile


    def extract(path, dest):
        with tarfile.open(path) as tar:
            for member in tar.getmembers():
                tar.extract(member, dest)
    """, """
    import os
    import tarfile


    def extract(path, dest):
        with tarfile.open(path) as tar:
            for member in tar.getmembers():
                target = os.path.realpath(os.path.join(dest, member.name))
                if not target.startswith(os.path.realpath(dest)):
                    continue
                tar.extract(member, dest)
    """)
wild("acme__admin", "Enforce access control on the admin export view", "admin/views.py", """
    def export(request):
        rows = load_rows()
        return render_csv(rows)
    """, """
    def export(request):
        if not request.user.is_staff:
            return forbidden()
        rows = load_rows()
        return render_csv(rows)
    """)
wild("acme__shell", "Fix command injection vulnerability in ping helper", "shell/net.py", """
    import os


    def ping(host):
        return os.system("ping -c 1 " + host)
    """, """
    import subprocess


    def ping(host):
        return subprocess.call(["ping", "-c", "1", host])
    """)
wild("acme__config", "Address CVE-2020-1747 by using the safe loader", "config/load.py", """
    import yaml


    def load(path):
        with open(path) as f:
            return yaml.load(f)
    """, """
    import yaml


    def load(path):
        with open(path) as f:
            return yaml.safe_load(f)
    """)
wild("acme__webapp", "Refactor logging setup", "webapp/log.py", """
    import logging


    def setup(level):
        logging.basicConfig(level=level)
        return logging.getLogger("webapp")
    """, """
    import logging


    def setup(level, name="webapp"):
        logging.basicConfig(level=level)
        return logging.getLogger(name)
    """)
wild("acme__cache", "Use a dict comprehension for the index", "cache/index.py", """
    def build_index(items):
        index = {}
        for item in items:
            index[item.key] = item
        return index
    """, """
    def build_index(items):
        index = {item.key: item for item in items}
        return index
    """)
wild("acme__db", "Add a helper to count rows", "db/stats.py", """
    def table_names(cursor):
        cursor.execute("SELECT name FROM sqlite_master")
        return [r[0] for r in cursor.fetchall()]
    """, """
    def table_names(cursor):
        cursor.execute("SELECT name FROM sqlite_master")
        return [r[0] for r in cursor.fetchall()]


    def count_rows(cursor, names):
        total = 0
        for name in names:
            total += 1
        return total
    """)
wild("acme__imaging", "Rename width parameter", "imaging/resize.py", """
    def scale(w, factor):
        result = w * factor
        return int(result)
    """, """
    def scale(width, factor):
        result = width * factor
        return int(result)
    """)
wild("acme__archive", "Speed up listing of members", "archive/listing.py", """
    def names(tar):
        out = []
        for m in tar.getmembers():
            out.append(m.name)
        return out
    """, """
    def names(tar):
        return [m.name for m in tar.getmembers()]
    """)
wild("acme__admin", "Update copyright year", "README.md", "Admin tools (c) 2022\n", "Admin tools (c) 2023\n")
wild("acme__shell", "Reword a comment", "shell/env.py", """
    import os


    def home():
        # find the home dir
        return os.path.expanduser("~")
    """, """
    import os


    def home():
        # resolve the home directory
        return os.path.expanduser("~")
    """)
wild("acme__config", "Support default values in get", "config/access.py", """
    def get(cfg, key):
        value = cfg[key]
        return value
    """, """
    def get(cfg, key, default=None):
        value = cfg.get(key, default)
        return value
    """)
wild("acme__legacy", "Port print statement", "legacy/report.py", """
    def report(x):
        print "value", x
    """, """
    def report(x):
        print "value:", x
    """)
wild("acme__webapp", "Bump version to 1.4.2", "webapp/version.py", """
    VERSION = "1.4.1"
    """, """
    VERSION = "1.4.2"
    """)


def main():
    commits = ROOT / "commits"
    for slug, hash_, cve, path, message, pre, post, _ in PATTERNS:
        write_commit(commits, slug, hash_, f"{message} ({cve})", {path: pre}, {path: post})

    refs = ["# cve_id\turl",
            "CVE-2021-27213\thttps://github.com/cvandeplas/pystemon/commit/dbeb87afefdb63de2f4cff69b6f10c5965d14b54"]
    for slug, hash_, cve, *_ in PATTERNS:
        owner, repo = slug.split("__", 1)
        refs.append(f"{cve}\thttps://github.com/{owner}/{repo}/commit/{hash_}")
    refs.append("CVE-2099-0001\thttps://github.com/acme/webapp/issues/17")
    refs.append("CVE-2099-0002\thttps://github.com/acme/webapp/commit/" + "0" * 40)
    (ROOT / "references.tsv").write_text("\n".join(refs) + "\n")

    with open(ROOT / "pattern_labels.tsv", "w") as f:
        for slug, hash_, _, _, _, _, _, category in PATTERNS:
            f.write(f"{slug}@{hash_}\t{category}\n")

    wild_root = ROOT / "wild" / "commits"
    if wild_root.exists():
        shutil.rmtree(wild_root)
    labels = ["# commit_id\tlabel",
              "cvandeplas__pystemon@dbeb87afefdb63de2f4cff69b6f10c5965d14b54\tsecurity"]
    labels += [f"{slug}@{hash_}\tsecurity" for slug, hash_, *_ in PATTERNS]
    for i, (slug, message, path, pre, post) in enumerate(WILD):
        hash_ = fake_hash(slug, message, str(i))
        write_commit(wild_root, slug, hash_, message, {path: pre}, {path: post})
        if i >= 10 and path.endswith(".py"):
            labels.append(f"{slug}@{hash_}\tnon_security")
    (ROOT / "train_labels.tsv").write_text("\n".join(labels) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
