import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from inclusion_guard.hosts import (HostKind, MalformedHost, RankTable, Role, RoleTable, SuffixTable,
                                   TldCategory, default_suffix_table, host_level, parse_host,
                                   tld_category)

from oracles import brute_force_suffix


@pytest.mark.parametrize("raw, kind, level, registrable", [
    ("www.google.com", HostKind.DNS_SLD_SUB, 2, "google.com"),
    ("google.com", HostKind.DNS_SLD, 1, "google.com"),
    ("192.168.0.1", HostKind.IPV4_PRIVATE, 1, None),
    ("4.2.2.4", HostKind.IPV4_PUBLIC, 1, None),
    ("ext:abcdefgh", HostKind.EXTENSION, 1, None),
    ("abc.dyndns.org", HostKind.DNS_NON_SLD, 2, "abc.dyndns.org"),
    ("a.b.dyndns.org", HostKind.DNS_NON_SLD_SUB, 3, "b.dyndns.org"),
])
def test_parse_host_examples(small_suffixes, raw, kind, level, registrable):
    h = parse_host(raw, small_suffixes)
    assert h.kind is kind
    assert h.level == level
    assert h.registrable == registrable


def test_extension_has_no_tld():
    h = parse_host("ext:abcdefgh")
    assert h.tld_category is TldCategory.NONE
    assert h.labels == ()
    assert h.alexa_rank is None


@pytest.mark.parametrize("raw", ["10.0.0.7", "172.16.3.4", "127.0.0.1", "169.254.1.1"])
def test_private_ipv4(raw):
    assert parse_host(raw).kind is HostKind.IPV4_PRIVATE


@pytest.mark.parametrize("raw", ["::1", "[2001:db8::1]", "2607:f0d0::::4"])
def test_ipv6(raw):
    assert parse_host(raw).kind is HostKind.IPV6


def test_normalization():
    h = parse_host("WWW.Google.COM.")
    assert h.raw == "www.google.com"
    assert h.labels == ("www", "google", "com")


@pytest.mark.parametrize("raw", [
    "", "   ", "a..com", "-", "bad host.com", "exa$mple.com", "a" * 64 + ".com",
    ".".join(["abcdefghi"] * 26), "ext:", "ext:bad/id",
])
def test_malformed(raw):
    with pytest.raises(MalformedHost):
        parse_host(raw)


def test_label_limits_ok():
    parse_host("a" * 63 + ".com")
    deep = ".".join(["a"] * 127)
    assert len(deep) == 253
    assert parse_host(deep).level == 126


@pytest.mark.parametrize("raw, cat", [
    ("example.co.uk", TldCategory.CC_SUBDOMAIN),
    ("example.com.cn", TldCategory.CC_SUBDOMAIN),
    ("example.xn--p1ai", TldCategory.CC_INT),
    ("example.info", TldCategory.OTHER),
    ("example.biz", TldCategory.OTHER),
    ("example.us.com", TldCategory.GEN_SUBDOMAIN),
    ("example.org", TldCategory.GEN),
    ("example.de", TldCategory.CC),
    ("1.2.3.4", TldCategory.NONE),
])
def test_tld_category(small_suffixes, raw, cat):
    h = parse_host(raw, small_suffixes)
    assert h.tld_category is cat
    assert tld_category(h) is cat


def test_generic_set_is_configurable(small_suffixes):
    assert parse_host("x.info", small_suffixes, generic_tlds=frozenset({"info"})).tld_category \
        is TldCategory.GEN


def test_host_level():
    assert host_level(parse_host("www.google.com")) == pytest.approx(2 / 126)
    assert host_level(parse_host("4.2.2.4")) == 1 / 126
    deep = parse_host(".".join(["a"] * 127))
    assert host_level(deep) == 1.0


def test_enum_round_trip():
    for k in HostKind:
        assert HostKind(k.value) is k
    for c in TldCategory:
        assert TldCategory(c.value) is c
    assert len(HostKind) == 8 and len(TldCategory) == 7


def test_wildcard_and_exception(small_suffixes):
    assert parse_host("foo.bar.ck", small_suffixes).registrable == "foo.bar.ck"
    assert parse_host("www.ck", small_suffixes).registrable == "www.ck"


def test_private_section_can_be_disabled():
    text = "// ===BEGIN ICANN DOMAINS===\norg\n// ===BEGIN PRIVATE DOMAINS===\ndyndns.org\n"
    with_private = SuffixTable.parse(text)
    without = SuffixTable.parse(text, include_private=False)
    assert parse_host("abc.dyndns.org", with_private).kind is HostKind.DNS_NON_SLD
    assert parse_host("abc.dyndns.org", without).kind is HostKind.DNS_SLD_SUB


def test_bundled_table_loads():
    table = default_suffix_table()
    assert len(table) > 5000
    assert parse_host("www.bbc.co.uk").registrable == "bbc.co.uk"


def test_unicode_host_is_punycoded():
    h = parse_host("пример.рф")
    assert h.labels[-1] == "xn--p1ai"
    assert h.tld_category is TldCategory.CC_INT


def test_rank_lookup(tables):
    assert tables.host("google.com").alexa_rank == 1
    assert tables.host("www.google.com").alexa_rank == 1  # via registrable domain
    assert tables.host("unknown.org").alexa_rank is None
    assert tables.host("8.8.8.8").alexa_rank is None


def test_rank_table_csv(tmp_path):
    p = tmp_path / "ranks.csv"
    p.write_text("rank,host\n1,google.com\n2,youtube.com\n")
    t = RankTable.load(p)
    assert t.get("youtube.com") == 2 and t.get("nope.com") is None
    with pytest.raises(ValueError):
        RankTable({"x.com": 0})


def test_roles(tables):
    assert tables.host("ad.doubleclick.net").roles == {Role.AD_NETWORK}
    assert tables.host("ads.example.com").roles == {Role.AD_NETWORK}
    assert tables.host("www.example.com").roles == frozenset()
    both = RoleTable.from_sets(ad_networks={"x.com"}, cdns={"x.com"})
    assert parse_host("x.com", roles=both).roles == {Role.AD_NETWORK, Role.CDN}


def test_role_files(tmp_path):
    (tmp_path / "ad_networks.txt").write_text("# ads\ndoubleclick.net\n\n")
    (tmp_path / "cdns.txt").write_text("akamai.net  # cdn\n")
    t = RoleTable.load_dir(tmp_path)
    assert t.ad_networks == {"doubleclick.net"} and t.cdns == {"akamai.net"}
    assert t.shorteners == frozenset()


# --- properties ---

label = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-", min_size=1, max_size=8)
rule_label = st.sampled_from(["a", "b", "c", "co", "com", "uk", "x1"])


@settings(max_examples=300, deadline=None)
@given(rules=st.lists(st.tuples(st.sampled_from(["", "*.", "!"]),
                                st.lists(rule_label, min_size=1, max_size=3),
                                st.booleans()), max_size=12),
       host=st.lists(rule_label, min_size=1, max_size=5))
def test_longest_match_against_brute_force(rules, host):
    table = SuffixTable([(pre + ".".join(labels), priv) for pre, labels, priv in rules
                         if not (pre == "!" and len(labels) < 2)])
    labels = tuple(host)
    entries = table.entries()
    assert table.lookup(labels).labels == brute_force_suffix(entries, labels)
    assert table.lookup(labels, icann_only=True).labels == \
        brute_force_suffix(entries, labels, icann_only=True)


@settings(max_examples=200, deadline=None)
@given(st.lists(label.filter(lambda s: s.strip("-") == s), min_size=1, max_size=6))
def test_dns_level_in_unit_interval(labels):
    h = parse_host(".".join(labels))
    # Dotted quads such as 0.0.0.0 are IP hosts and have no DNS level.
    assume(h.kind.value.startswith("dns"))
    assert h.level >= 1
    assert 0 < host_level(h) <= 1
    if len(labels) > 1:
        assert h.level == len(labels) - 1
    if h.registrable_domain is not None:
        assert h.labels[-len(h.registrable_domain):] == h.registrable_domain
        assert len(h.registrable_domain) == len(h.public_suffix) + 1


@settings(max_examples=100, deadline=None)
@given(hosts=st.lists(st.sampled_from(["a.com", "b.net", "c.org", "x.a.com"]), max_size=3),
       extra=st.sampled_from(["a.com", "b.net", "c.org", "x.a.com"]),
       probe=st.sampled_from(["a.com", "x.a.com", "b.net", "y.c.org"]),
       which=st.integers(0, 2))
def test_role_lookup_monotone(hosts, extra, probe, which):
    sets = [set(hosts), set(), set()]
    before = parse_host(probe, roles=RoleTable.from_sets(*sets)).roles
    sets[which].add(extra)
    after = parse_host(probe, roles=RoleTable.from_sets(*sets)).roles
    assert before <= after
